#pragma once

#include "uwsc/enhance.hpp"
#include "uwsc/pipeline.hpp"
#include "uwsc/synthetic.hpp"

namespace testutil {

/// DCT base dictionary and an enhanced dictionary derived from synthetic pairs.
inline std::pair<uwsc::Dictionary, uwsc::Dictionary> toy_dictionaries() {
  const auto d1 = uwsc::dct_dictionary();
  std::vector<uwsc::ImagePair> pairs;
  for (std::uint64_t s = 0; s < 3; ++s) {
    const auto img = uwsc::synthetic::underwater_scene(500 + s, 128, 128);
    pairs.push_back({img, uwsc::reference_enhance(img)});
  }
  return {d1, uwsc::derive_d2(pairs, d1, 32)};
}

/// Untrained toy-width system with deterministic weights.
inline uwsc::CodecSystem toy_system(int lambda = 64, std::uint64_t seed = 9) {
  auto [d1, d2] = toy_dictionaries();
  return uwsc::CodecSystem(std::move(d1), std::move(d2), uwsc::ModelSet<float>(uwsc::ModelConfig::toy(lambda), seed));
}

}  // namespace testutil
