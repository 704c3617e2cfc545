// Shared generators for the test suites.
#pragma once

#include <random>
#include <string>
#include <vector>

#include "statelens/model.hpp"

namespace statelens::support {

inline model::Word random_word(std::mt19937_64& rng, const std::vector<std::string>& inputs,
                               std::size_t max_len, std::size_t min_len = 1) {
  std::uniform_int_distribution<std::size_t> len(min_len, max_len);
  std::uniform_int_distribution<std::size_t> pick(0, inputs.size() - 1);
  model::Word w(len(rng));
  for (auto& s : w) s = inputs[pick(rng)];
  return w;
}

// Every word over `inputs` of length 1..max_len.
inline std::vector<model::Word> all_words(const std::vector<std::string>& inputs,
                                          std::size_t max_len) {
  std::vector<model::Word> out;
  std::vector<model::Word> layer{{}};
  for (std::size_t len = 1; len <= max_len; ++len) {
    std::vector<model::Word> next;
    for (const auto& w : layer)
      for (const auto& i : inputs) {
        auto x = w;
        x.push_back(i);
        next.push_back(x);
      }
    out.insert(out.end(), next.begin(), next.end());
    layer = std::move(next);
  }
  return out;
}

}  // namespace statelens::support
