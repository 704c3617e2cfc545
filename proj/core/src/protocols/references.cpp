#include <algorithm>
#include <string>

#include "statelens/protocols.hpp"

namespace statelens::protocols {

model::MealyMachine backdoor_reference(int n) {
  if (n < 1) throw std::invalid_argument("backdoor depth must be positive");
  model::MealyMachine m({"init", "auth", "data", "reset"});
  std::vector<std::size_t> u;
  for (int k = 0; k < n; ++k) u.push_back(m.add_state("U" + std::to_string(k)));
  auto a = m.add_state("A");
  for (int k = 0; k < n; ++k) {
    m.set_transition(u[k], "init", "INIT_OK", k + 1 < n ? u[k + 1] : a);
    m.set_transition(u[k], "auth", "AUTH_OK", a);
    m.set_transition(u[k], "data", "ERR", u[0]);
    m.set_transition(u[k], "reset", "RESET_OK", u[0]);
  }
  m.set_transition(a, "init", "ERR", a);
  m.set_transition(a, "auth", "ERR", a);
  m.set_transition(a, "data", "DATA", a);
  m.set_transition(a, "reset", "RESET_OK", u[0]);
  m.set_initial(u[0]);
  return m;
}

model::MealyMachine handshake_bypass_reference(int n) {
  if (n < 0) throw std::invalid_argument("read sequence limit must be non-negative");
  const std::vector<std::string> inputs = {"hello", "cert",   "verify",
                                           "badverify", "finish", "data"};
  model::MealyMachine m(inputs);
  auto init = m.add_state("INIT");
  auto wcert = m.add_state("WCERT");
  std::vector<std::size_t> wv;
  for (int r = 0; r <= n; ++r) wv.push_back(m.add_state("WVERIFY" + std::to_string(r)));
  auto wfin = m.add_state("WFIN");
  auto est = m.add_state("EST");
  auto expect = [&](std::size_t s, const std::string& good, const std::string& out,
                    std::size_t to) {
    for (auto& i : inputs) {
      if (i == good) m.set_transition(s, i, out, to);
      else m.set_transition(s, i, "ERR", s);
    }
  };
  expect(init, "hello", "HELLO_OK", wcert);
  expect(wcert, "cert", "CERT_OK", wv[0]);
  expect(wfin, "finish", "FIN_OK", est);
  expect(est, "data", "DATA", est);
  for (int r = 0; r <= n; ++r) {
    auto s = wv[r];
    for (auto& i : inputs) {
      if (i == "verify") m.set_transition(s, i, "VERIFY_OK", wfin);
      else if (i == "badverify")
        m.set_transition(s, i, r == n ? "VERIFY_OK" : "ERR", r == n ? wfin : s);
      else if (i == "data") m.set_transition(s, i, model::kEmpty, wv[std::min(r + 1, n)]);
      else m.set_transition(s, i, "ERR", s);
    }
  }
  m.set_initial(init);
  return m;
}

}  // namespace statelens::protocols
