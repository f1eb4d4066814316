/* Copyright 2026 The adabit Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef ADABIT_TESTS_FIXTURES_HPP_
#define ADABIT_TESTS_FIXTURES_HPP_

#include <random>
#include <string>
#include <vector>

#include "adabit/datapipe.hpp"
#include "adabit/metrics.hpp"
#include "adabit/srnet.hpp"

namespace fixture {

inline adabit::SrNetConfig tiny_config(adabit::QuantScope scope = adabit::QuantScope::kBodyOnly) {
  adabit::SrNetConfig c;
  c.num_blocks = 1;
  c.channels = 4;
  c.scale = 2;
  c.scope = scope;
  c.b_base = 4;
  return c;
}

// Frozen, untrained tiny network.
inline adabit::SrNetwork tiny_net(std::uint64_t seed = 1,
                                  adabit::QuantScope scope = adabit::QuantScope::kBodyOnly) {
  adabit::SrNetwork net(tiny_config(scope), seed);
  net.set_frozen(true);
  return net;
}

// Synthetic calibration set of `count` LR images of side `side`.
inline adabit::CalibSet synth_calib(std::size_t count, int side, std::uint64_t seed) {
  adabit::CalibSet set;
  set.sampling_seed = seed;
  const auto images = adabit::synth_pool(count, 2 * side, 2 * side, seed);
  for (std::size_t i = 0; i < images.size(); ++i) {
    adabit::Tensor lr = adabit::box_downsample(images[i], 2);
    const auto c = adabit::complexity(lr);
    set.entries.push_back({std::move(lr), c, "img" + std::to_string(i)});
  }
  return set;
}

}  // namespace fixture

#endif  // ADABIT_TESTS_FIXTURES_HPP_
