#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "cwb/encoder.hpp"
#include "cwb/numerics.hpp"

namespace cwb {

enum class LayerSelector {
  kLastHidden,
  kSecondToLast,
  kAllHidden,
  kFirstAndLast,
  kLastTwo,
  kLastFour,
  kConcatLastFour,
};

enum class Reduce { kAverage, kMax };

struct PoolingMethod {
  LayerSelector selector = LayerSelector::kLastHidden;
  Reduce reduce = Reduce::kAverage;

  friend bool operator==(const PoolingMethod&, const PoolingMethod&) = default;
};

// Accepts avg-last, max-last, avg-second-last, avg-all, avg-first-last,
// avg-last-two, avg-last-four, concat-last-four and the max- variant of each
// ("max-concat-last-four" included). Throws kConfig otherwise.
PoolingMethod parse_pooling(std::string_view name);
std::string to_string(const PoolingMethod& method);
// Every accepted method in canonical order.
std::vector<PoolingMethod> all_pooling_methods();

// Stack indices the selector combines (0 = embedding output).
// Throws kConfig when the encoder is too shallow for the selector.
std::vector<std::size_t> selected_layers(LayerSelector selector,
                                         std::size_t n_layers);

// Output width for an encoder of width `hidden`.
std::size_t pooled_dim(const PoolingMethod& method, std::size_t hidden);

// batch x D sentence embeddings. Tokens are reduced over real positions only,
// then selected layers are averaged (or concatenated for concat-last-four).
Tensor pool(const HiddenStack& stack, const PoolingMethod& method);

// Gradient of pool() with respect to every stack layer, given dLoss/dOutput.
// Entries for unselected layers are left empty.
std::vector<std::vector<double>> pool_backward(const HiddenStack& stack,
                                               const PoolingMethod& method,
                                               const Tensor& d_pooled);

}  // namespace cwb
