#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "midibert/eval.h"
#include "midibert/score.h"

namespace midibert::fixtures {

// Declarative skyline reference. Times are in half sub-beats. A note is
// eligible when it is the top note of its onset (highest pitch, lowest index
// on ties) and no earlier-starting note still sounding is higher. The melody
// set S is every eligible note that no earlier member of S is still sounding
// over. All subsets of the eligible notes are tried; the rule must pick
// exactly one; otherwise the result is empty.
inline std::vector<int32_t> skyline_oracle(const Score& s) {
  const auto& n = s.notes;
  const size_t N = n.size();
  auto start = [&](size_t i) { return 2 * static_cast<int64_t>(n[i].onset()); };
  auto end = [&](size_t i) { return start(i) + n[i].duration; };
  std::vector<size_t> eligible;
  for (size_t c = 0; c < N; ++c) {
    bool ok = true;
    for (size_t o = 0; o < N && ok; ++o) {
      if (o == c) continue;
      if (start(o) == start(c) && (n[o].pitch > n[c].pitch || (n[o].pitch == n[c].pitch && o < c))) ok = false;
      if (start(o) < start(c) && end(o) > start(c) && n[o].pitch > n[c].pitch) ok = false;
    }
    if (ok) eligible.push_back(c);
  }
  if (eligible.size() > 20) throw std::runtime_error("skyline_oracle: too many eligible notes");
  std::vector<std::vector<int32_t>> solutions;
  for (uint64_t mask = 0; mask < (uint64_t{1} << eligible.size()); ++mask) {
    auto in = [&](size_t k) { return (mask >> k & 1) != 0; };
    bool consistent = true;
    for (size_t k = 0; k < eligible.size() && consistent; ++k) {
      const size_t c = eligible[k];
      bool blocked = false;
      for (size_t j = 0; j < eligible.size(); ++j) {
        const size_t s2 = eligible[j];
        if (in(j) && start(s2) < start(c) && end(s2) > start(c)) blocked = true;
      }
      consistent = in(k) == !blocked;
    }
    if (!consistent) continue;
    std::vector<int32_t> out(N, kBinaryNonMelody);
    for (size_t k = 0; k < eligible.size(); ++k) {
      if (in(k)) out[eligible[k]] = kBinaryMelody;
    }
    solutions.push_back(out);
  }
  if (solutions.size() != 1) return {};
  return solutions.front();
}

}  // namespace midibert::fixtures
