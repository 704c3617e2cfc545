#include <algorithm>
#include <deque>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "statelens/model.hpp"

namespace statelens::model {

std::size_t MealyMachine::add_state(std::string id, bool terminal) {
  states_.push_back({std::move(id), terminal});
  delta_.emplace_back();
  return states_.size() - 1;
}

void MealyMachine::set_transition(std::size_t from, const std::string& input,
                                  std::string output, std::size_t to) {
  if (from >= states_.size() || to >= states_.size())
    throw std::out_of_range("transition references unknown state");
  if (std::find(inputs_.begin(), inputs_.end(), input) == inputs_.end())
    inputs_.push_back(input);
  delta_[from][input] = {std::move(output), to};
}

std::optional<std::size_t> MealyMachine::find_state(const std::string& id) const {
  for (std::size_t i = 0; i < states_.size(); ++i)
    if (states_[i].id == id) return i;
  return std::nullopt;
}

const Transition* MealyMachine::transition(std::size_t s,
                                           const std::string& input) const {
  auto& d = delta_.at(s);
  auto it = d.find(input);
  return it == d.end() ? nullptr : &it->second;
}

std::optional<Transition> MealyMachine::step(std::size_t s,
                                             const std::string& input) const {
  if (auto t = transition(s, input)) return *t;
  if (states_.at(s).terminal) return Transition{kClosed, s};
  return std::nullopt;
}

Word MealyMachine::run(const Word& word) const {
  Word out;
  std::size_t s = initial_;
  for (auto& i : word) {
    if (auto t = step(s, i)) {
      out.push_back(t->output);
      s = t->to;
    } else {
      out.push_back("?");
    }
  }
  return out;
}

std::size_t MealyMachine::state_after(const Word& word) const {
  std::size_t s = initial_;
  for (auto& i : word)
    if (auto t = step(s, i)) s = t->to;
  return s;
}

bool MealyMachine::is_complete() const {
  for (std::size_t s = 0; s < states_.size(); ++s) {
    if (states_[s].terminal) continue;
    for (auto& i : inputs_)
      if (!transition(s, i)) return false;
  }
  return true;
}

std::map<std::size_t, Word> MealyMachine::access_words() const {
  std::map<std::size_t, Word> acc;
  if (states_.empty()) return acc;
  std::deque<std::size_t> q{initial_};
  acc[initial_] = {};
  while (!q.empty()) {
    auto s = q.front();
    q.pop_front();
    for (auto& i : inputs_) {
      auto t = step(s, i);
      if (!t || acc.count(t->to)) continue;
      auto w = acc[s];
      w.push_back(i);
      acc[t->to] = std::move(w);
      q.push_back(t->to);
    }
  }
  return acc;
}

std::vector<std::size_t> MealyMachine::reachable() const {
  std::vector<std::size_t> r;
  for (auto& [s, w] : access_words()) r.push_back(s);
  return r;
}

std::size_t MealyMachine::diameter() const {
  std::size_t d = 0;
  for (auto& [s, w] : access_words()) d = std::max(d, w.size());
  return d;
}

std::size_t MealyMachine::minimal_size() const {
  auto reach = reachable();
  if (reach.empty()) return 0;
  // Moore partition refinement, starting from output signatures.
  std::map<std::size_t, std::size_t> block;
  {
    std::map<std::vector<std::string>, std::size_t> ids;
    for (auto s : reach) {
      std::vector<std::string> sig;
      for (auto& i : inputs_) {
        auto t = step(s, i);
        sig.push_back(t ? t->output : "?");
      }
      block[s] = ids.emplace(sig, ids.size()).first->second;
    }
  }
  while (true) {
    std::map<std::vector<std::size_t>, std::size_t> ids;
    std::map<std::size_t, std::size_t> next;
    for (auto s : reach) {
      std::vector<std::size_t> sig{block[s]};
      for (auto& i : inputs_) {
        auto t = step(s, i);
        sig.push_back(t ? block[t->to] : SIZE_MAX);
      }
      next[s] = ids.emplace(sig, ids.size()).first->second;
    }
    std::set<std::size_t> before, after;
    for (auto& [s, b] : block) before.insert(b);
    for (auto& [s, b] : next) after.insert(b);
    block = std::move(next);
    if (after.size() == before.size()) return after.size();
  }
}

Equivalence equivalent(const MealyMachine& a, const MealyMachine& b,
                       const std::vector<std::string>& alphabet) {
  std::vector<std::string> inputs = alphabet;
  if (inputs.empty()) {
    inputs = a.inputs();
    for (auto& i : b.inputs())
      if (std::find(inputs.begin(), inputs.end(), i) == inputs.end())
        inputs.push_back(i);
  }
  Equivalence result;
  if (a.size() == 0 || b.size() == 0) {
    result.equal = a.size() == b.size();
    return result;
  }
  using Pair = std::pair<std::size_t, std::size_t>;
  std::map<Pair, std::pair<Pair, std::string>> parent;
  std::deque<Pair> q;
  Pair start{a.initial(), b.initial()};
  parent[start] = {start, ""};
  q.push_back(start);
  auto trace = [&](Pair p, const std::string& last) {
    Word w{last};
    while (p != start) {
      auto& [prev, in] = parent[p];
      w.push_back(in);
      p = prev;
    }
    std::reverse(w.begin(), w.end());
    return w;
  };
  while (!q.empty()) {
    auto p = q.front();
    q.pop_front();
    for (auto& i : inputs) {
      auto ta = a.step(p.first, i);
      auto tb = b.step(p.second, i);
      std::string oa = ta ? ta->output : "?";
      std::string ob = tb ? tb->output : "?";
      if (oa != ob) {
        result.equal = false;
        result.counterexample = trace(p, i);
        return result;
      }
      Pair n{ta ? ta->to : p.first, tb ? tb->to : p.second};
      if (parent.emplace(n, std::make_pair(p, i)).second) q.push_back(n);
    }
  }
  return result;
}

std::string export_dot(const MealyMachine& m) {
  auto quote = [](const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
      if (c == '"' || c == '\\') out += '\\';
      out += c;
    }
    return out + "\"";
  };
  std::ostringstream os;
  os << "digraph mealy {\n  rankdir=LR;\n";
  for (std::size_t s = 0; s < m.size(); ++s) {
    os << "  s" << s << " [label=" << quote(m.states()[s].id) << ", shape="
       << (m.states()[s].terminal ? "doublecircle" : "circle");
    if (s == m.initial()) os << ", penwidth=2";
    os << "];\n";
  }
  for (std::size_t s = 0; s < m.size(); ++s) {
    for (auto& i : m.inputs()) {
      auto t = m.transition(s, i);
      if (!t) continue;
      os << "  s" << s << " -> s" << t->to << " [label=" << quote(i + "/" + t->output)
         << "];\n";
    }
  }
  os << "}\n";
  return os.str();
}

std::string export_json(const MealyMachine& m) {
  nlohmann::ordered_json j;
  j["inputs"] = m.inputs();
  auto& states = j["states"] = nlohmann::ordered_json::array();
  for (auto& s : m.states()) states.push_back({{"id", s.id}, {"terminal", s.terminal}});
  j["initial"] = m.size() ? m.states()[m.initial()].id : "";
  auto& trans = j["transitions"] = nlohmann::ordered_json::array();
  for (std::size_t s = 0; s < m.size(); ++s) {
    for (auto& i : m.inputs()) {
      auto t = m.transition(s, i);
      if (!t) continue;
      trans.push_back({{"from", m.states()[s].id},
                       {"input", i},
                       {"output", t->output},
                       {"to", m.states()[t->to].id}});
    }
  }
  return j.dump(2) + "\n";
}

MealyMachine import_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError(std::string("invalid JSON: ") + e.what());
  }
  auto id_of = [](const nlohmann::json& v) -> std::string {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_integer()) return std::to_string(v.get<long long>());
    throw SchemaError("state id must be a string or integer");
  };
  if (!j.is_object() || !j.contains("states") || !j["states"].is_array() ||
      !j.contains("initial") || !j.contains("transitions") ||
      !j["transitions"].is_array())
    throw SchemaError("model requires states, initial and transitions");
  MealyMachine m;
  if (j.contains("inputs")) {
    if (!j["inputs"].is_array()) throw SchemaError("inputs must be an array");
    m.set_inputs(j["inputs"].get<std::vector<std::string>>());
  }
  for (auto& s : j["states"]) {
    if (!s.is_object() || !s.contains("id")) throw SchemaError("state without id");
    auto id = id_of(s["id"]);
    if (m.find_state(id)) throw SchemaError("duplicate state id " + id);
    bool terminal = s.value("terminal", false);
    m.add_state(id, terminal);
  }
  auto lookup = [&](const nlohmann::json& v) {
    auto id = id_of(v);
    auto s = m.find_state(id);
    if (!s) throw SchemaError("unknown state id " + id);
    return *s;
  };
  m.set_initial(lookup(j["initial"]));
  for (auto& t : j["transitions"]) {
    if (!t.is_object() || !t.contains("from") || !t.contains("input") ||
        !t.contains("output") || !t.contains("to") || !t["input"].is_string() ||
        !t["output"].is_string())
      throw SchemaError("transition requires from, input, output, to");
    auto from = lookup(t["from"]);
    auto input = t["input"].get<std::string>();
    if (m.transition(from, input))
      throw SchemaError("nondeterministic transition from " + id_of(t["from"]));
    m.set_transition(from, input, t["output"].get<std::string>(), lookup(t["to"]));
  }
  return m;
}

}  // namespace statelens::model
