#include "cwb/pooling.hpp"

#include <array>
#include <limits>
#include <utility>

#include "cwb/error.hpp"

namespace cwb {

namespace {

constexpr std::array<std::pair<LayerSelector, std::string_view>, 7> kSelectorNames = {{
    {LayerSelector::kLastHidden, "last"},
    {LayerSelector::kSecondToLast, "second-last"},
    {LayerSelector::kAllHidden, "all"},
    {LayerSelector::kFirstAndLast, "first-last"},
    {LayerSelector::kLastTwo, "last-two"},
    {LayerSelector::kLastFour, "last-four"},
    {LayerSelector::kConcatLastFour, "concat-last-four"},
}};

std::string_view selector_name(LayerSelector s) {
  for (const auto& [sel, name] : kSelectorNames) {
    if (sel == s) return name;
  }
  return "?";
}

bool concatenates(const PoolingMethod& m) {
  return m.selector == LayerSelector::kConcatLastFour;
}

void check_stack(const HiddenStack& stack) {
  for (std::size_t b = 0; b < stack.batch; ++b) {
    bool any = false;
    for (std::size_t s = 0; s < stack.width; ++s) {
      any = any || stack.mask[b * stack.width + s] != 0;
    }
    if (!any) {
      throw Error(ErrorKind::kInput,
                  "sentence " + std::to_string(b) + " has no real tokens");
    }
  }
}

}  // namespace

PoolingMethod parse_pooling(std::string_view name) {
  const std::string_view original = name;
  if (name == "concat-last-four") {
    return {LayerSelector::kConcatLastFour, Reduce::kAverage};
  }
  Reduce reduce;
  if (name.starts_with("avg-")) {
    reduce = Reduce::kAverage;
  } else if (name.starts_with("max-")) {
    reduce = Reduce::kMax;
  } else {
    throw Error(ErrorKind::kConfig,
                "unknown pooling method '" + std::string(original) + "'");
  }
  name.remove_prefix(4);
  for (const auto& [sel, sel_name] : kSelectorNames) {
    if (sel_name != name) continue;
    // Plain "avg-concat-last-four" is not a spelling the CLI accepts.
    if (sel == LayerSelector::kConcatLastFour && reduce == Reduce::kAverage) break;
    return {sel, reduce};
  }
  throw Error(ErrorKind::kConfig,
              "unknown pooling method '" + std::string(original) + "'");
}

std::string to_string(const PoolingMethod& method) {
  if (concatenates(method)) {
    return method.reduce == Reduce::kAverage ? "concat-last-four"
                                             : "max-concat-last-four";
  }
  return std::string(method.reduce == Reduce::kAverage ? "avg-" : "max-") +
         std::string(selector_name(method.selector));
}

std::vector<PoolingMethod> all_pooling_methods() {
  std::vector<PoolingMethod> out;
  for (Reduce r : {Reduce::kAverage, Reduce::kMax}) {
    for (const auto& [sel, name] : kSelectorNames) out.push_back({sel, r});
  }
  return out;
}

std::vector<std::size_t> selected_layers(LayerSelector selector,
                                         std::size_t n_layers) {
  auto require = [&](std::size_t min_layers) {
    if (n_layers < min_layers) {
      throw Error(ErrorKind::kConfig,
                  std::string(selector_name(selector)) + " pooling needs at least " +
                      std::to_string(min_layers) + " encoder layers, got " +
                      std::to_string(n_layers));
    }
  };
  const std::size_t last = n_layers;
  switch (selector) {
    case LayerSelector::kLastHidden:
      require(1);
      return {last};
    case LayerSelector::kSecondToLast:
      require(2);
      return {last - 1};
    case LayerSelector::kAllHidden: {
      require(1);
      std::vector<std::size_t> all(n_layers + 1);
      for (std::size_t i = 0; i <= n_layers; ++i) all[i] = i;
      return all;
    }
    case LayerSelector::kFirstAndLast:
      require(1);
      return {0, last};
    case LayerSelector::kLastTwo:
      require(2);
      return {last - 1, last};
    case LayerSelector::kLastFour:
    case LayerSelector::kConcatLastFour:
      require(4);
      return {last - 3, last - 2, last - 1, last};
  }
  return {};
}

std::size_t pooled_dim(const PoolingMethod& method, std::size_t hidden) {
  return concatenates(method) ? 4 * hidden : hidden;
}

Tensor pool(const HiddenStack& stack, const PoolingMethod& method) {
  const auto layers = selected_layers(method.selector, stack.n_layers());
  check_stack(stack);
  const std::size_t h = stack.hidden;
  const std::size_t dim = pooled_dim(method, h);
  const Precision precision = stack.layers.back().precision();
  Tensor out({stack.batch, dim}, Precision::kCheck64);
  std::vector<double> reduced(h);

  for (std::size_t b = 0; b < stack.batch; ++b) {
    std::size_t real = 0;
    for (std::size_t s = 0; s < stack.width; ++s) real += stack.mask[b * stack.width + s];
    for (std::size_t li = 0; li < layers.size(); ++li) {
      const Tensor& layer = stack.layers[layers[li]];
      if (method.reduce == Reduce::kAverage) {
        std::fill(reduced.begin(), reduced.end(), 0.0);
      } else {
        std::fill(reduced.begin(), reduced.end(),
                  -std::numeric_limits<double>::infinity());
      }
      for (std::size_t s = 0; s < stack.width; ++s) {
        if (stack.mask[b * stack.width + s] == 0) continue;
        const double* x = layer.data().data() + (b * stack.width + s) * h;
        for (std::size_t c = 0; c < h; ++c) {
          reduced[c] = method.reduce == Reduce::kAverage
                           ? reduced[c] + x[c]
                           : std::max(reduced[c], x[c]);
        }
      }
      if (method.reduce == Reduce::kAverage) {
        for (double& v : reduced) v /= static_cast<double>(real);
      }
      const std::size_t offset = concatenates(method) ? li * h : 0;
      for (std::size_t c = 0; c < h; ++c) out.at(b, offset + c) += reduced[c];
    }
    if (!concatenates(method)) {
      for (std::size_t c = 0; c < h; ++c) {
        out.at(b, c) /= static_cast<double>(layers.size());
      }
    }
  }
  out.set_precision(precision);
  return out;
}

std::vector<std::vector<double>> pool_backward(const HiddenStack& stack,
                                               const PoolingMethod& method,
                                               const Tensor& d_pooled) {
  const auto layers = selected_layers(method.selector, stack.n_layers());
  const std::size_t h = stack.hidden;
  const std::size_t dim = pooled_dim(method, h);
  if (d_pooled.rank() != 2 || d_pooled.dim(0) != stack.batch ||
      d_pooled.dim(1) != dim) {
    throw Error(ErrorKind::kDimension, "pool_backward: gradient shape mismatch");
  }
  const double layer_weight = concatenates(method) ? 1.0 : 1.0 / layers.size();
  std::vector<std::vector<double>> grads(stack.layers.size());

  for (std::size_t li = 0; li < layers.size(); ++li) {
    const Tensor& layer = stack.layers[layers[li]];
    auto& g = grads[layers[li]];
    g.assign(stack.batch * stack.width * h, 0.0);
    const std::size_t offset = concatenates(method) ? li * h : 0;
    for (std::size_t b = 0; b < stack.batch; ++b) {
      std::size_t real = 0;
      for (std::size_t s = 0; s < stack.width; ++s) real += stack.mask[b * stack.width + s];
      for (std::size_t c = 0; c < h; ++c) {
        const double upstream = layer_weight * d_pooled.at(b, offset + c);
        if (method.reduce == Reduce::kAverage) {
          const double share = upstream / static_cast<double>(real);
          for (std::size_t s = 0; s < stack.width; ++s) {
            if (stack.mask[b * stack.width + s] != 0) {
              g[(b * stack.width + s) * h + c] += share;
            }
          }
        } else {
          // The first maximal position takes the gradient.
          std::size_t arg = stack.width;
          double best = -std::numeric_limits<double>::infinity();
          for (std::size_t s = 0; s < stack.width; ++s) {
            if (stack.mask[b * stack.width + s] == 0) continue;
            const double v = layer[(b * stack.width + s) * h + c];
            if (arg == stack.width || v > best) {
              best = v;
              arg = s;
            }
          }
          g[(b * stack.width + arg) * h + c] += upstream;
        }
      }
    }
  }
  return grads;
}

}  // namespace cwb
