#include "dam/network.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <thread>

#include "dam/random.hpp"

namespace dam {
namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

std::string layer_name(std::size_t index) { return "layer " + std::to_string(index); }

}  // namespace

void NetworkSpec::validate() const {
  if (input_channels == 0) throw Error("network: input needs at least one channel");
  if (!(mean_depth > 0)) throw Error("network: mean_depth must be positive");
  if (layers.empty()) throw Error("network: no layers");
  if (!std::holds_alternative<ConvLayerSpec>(layers.back())) {
    throw Error("network: the last layer before softmax_loss must be a convolution");
  }
  if (loss.lambda < 0) throw Error("network: lambda must be >= 0");

  std::size_t channels = input_channels;
  std::int32_t stride_product = 1;
  bool seen_conv = false;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (const auto* pool = std::get_if<PoolLayerSpec>(&layers[i])) {
      if (pool->window == 0 || pool->stride == 0) {
        throw Error("network: " + layer_name(i) + ": pooling window and stride must be >= 1");
      }
      stride_product *= static_cast<std::int32_t>(pool->stride);
      continue;
    }
    const auto& conv = std::get<ConvLayerSpec>(layers[i]);
    const auto where = "network: " + layer_name(i) + ": ";
    if (conv.out_channels == 0) throw Error(where + "out_channels must be >= 1");
    if (conv.kernel % 2 == 0) throw Error(where + "kernel must be odd");
    if (conv.depth_diff && seen_conv) {
      throw Error(where + "depth_diff is only allowed on the first convolution");
    }
    if (conv.scale_groups.empty() || conv.scale_groups.size() > channels) {
      throw Error(where + std::to_string(conv.scale_groups.size()) + " s_r groups for " +
                  std::to_string(channels) + " input channels");
    }
    for (Real s : conv.scale_groups) {
      if (!(s > 0)) throw Error(where + "s_r values must be positive");
    }
    if (conv.q < 1) throw Error(where + "q must be >= 1");
    if (conv.s_max < 1) throw Error(where + "s_max must be >= 1");
    if (conv.reference_depth && !(*conv.reference_depth > 0)) {
      throw Error(where + "reference_depth must be positive");
    }
    if (conv.pool_product && *conv.pool_product != stride_product) {
      throw Error(where + "pool_product " + std::to_string(*conv.pool_product) +
                  " disagrees with the preceding pooling strides (" + std::to_string(stride_product) + ")");
    }
    seen_conv = true;
    channels = conv.out_channels;
  }
  if (channels < 2) throw Error("network: the classifier needs at least two classes");
}

std::size_t NetworkSpec::classes() const {
  for (auto it = layers.rbegin(); it != layers.rend(); ++it) {
    if (const auto* conv = std::get_if<ConvLayerSpec>(&*it)) return conv->out_channels;
  }
  return 0;
}

std::size_t NetworkSpec::total_stride() const {
  std::size_t s = 1;
  for (const auto& l : layers) {
    if (const auto* pool = std::get_if<PoolLayerSpec>(&l)) s *= pool->stride;
  }
  return s;
}

Network Network::build(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  Network net;
  net.spec_ = spec;
  Rng rng(seed);
  std::size_t channels = spec.input_channels;
  std::int32_t stride_product = 1;
  for (const auto& layer : spec.layers) {
    if (const auto* pool = std::get_if<PoolLayerSpec>(&layer)) {
      net.layers_.emplace_back(MaxPool(pool->window, pool->stride));
      stride_product *= static_cast<std::int32_t>(pool->stride);
      continue;
    }
    const auto& conv = std::get<ConvLayerSpec>(layer);
    WeightTensor w(conv.out_channels, channels, conv.kernel, conv.kernel);
    const Real bound = std::sqrt(3.0 / static_cast<Real>(w.fan_in()));
    for (Real& v : w.values()) v = rng.uniform(-bound, bound);

    MultiscaleParams params;
    params.scales = expand_scale_groups(conv.scale_groups, channels);
    params.mean_depth = spec.mean_depth;
    params.pool_product = stride_product;
    params.ancestor_dilation = conv.q;
    params.max_dilation = conv.s_max;
    net.layers_.emplace_back(DamConv(std::move(w), std::vector<Real>(conv.out_channels, 0), std::move(params),
                                     conv.activation, conv.depth_diff));
    channels = conv.out_channels;
  }
  return net;
}

FeatureMap Network::forward(const FeatureMap& input, const DepthMap& raw_depth) {
  if (input.channels() != spec_.input_channels) {
    throw Error("network: input " + input.shape_string() + " has wrong channel count, expected " +
                std::to_string(spec_.input_channels));
  }
  if (raw_depth.height() != input.height() || raw_depth.width() != input.width()) {
    throw Error("network: depth map does not match input " + input.shape_string());
  }
  DepthMap depth = raw_depth.has_holes() ? fill_holes(raw_depth) : raw_depth;
  conv_depths_.clear();

  FeatureMap x = input;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (auto* pool = std::get_if<MaxPool>(&layers_[i])) {
      x = pool->forward(x);
      depth = pool->forward_depth(depth);
      continue;
    }
    auto& conv = std::get<DamConv>(layers_[i]);
    const auto& conv_spec = std::get<ConvLayerSpec>(spec_.layers[i]);
    if (depth.height() != x.height() || depth.width() != x.width()) {
      throw Error("network: " + layer_name(i) + ": depth map " + std::to_string(depth.height()) + "x" +
                  std::to_string(depth.width()) + " drifted from activations " + x.shape_string());
    }
    if (x.channels() != conv.weights().in_channels()) {
      throw Error("network: " + layer_name(i) + ": expected " + std::to_string(conv.weights().in_channels()) +
                  " channels, got " + x.shape_string());
    }
    conv_depths_.push_back(depth);
    switch (conv_spec.mode) {
      case SparsityMode::adaptive:
        x = conv.forward(x, depth);
        break;
      case SparsityMode::fixed: {
        const DepthMap flat(depth.height(), depth.width(), conv_spec.reference_depth.value_or(spec_.mean_depth));
        x = conv.forward(x, flat);
        break;
      }
      case SparsityMode::dense:
        x = conv.forward_with_sparsity(x, SparsityMap(x.channels(), x.height(), x.width(), 1));
        break;
    }
  }
  logits_ = x;
  return softmax(logits_);
}

SampleGradients Network::forward_backward(const FeatureMap& input, const DepthMap& depth,
                                          const LabelMap& labels) {
  const FeatureMap prob = forward(input, depth);
  auto loss = logistic_loss(prob, labels, spec_.loss);
  SampleGradients out;
  out.data_loss = loss.loss;
  out.input = backward(loss.grad_logits, out.params);
  return out;
}

FeatureMap Network::backward(const FeatureMap& grad_logits, std::vector<std::vector<Real>>& grads) {
  const auto names = parameter_names();
  grads.assign(names.size(), {});
  std::size_t block = grads.size();
  FeatureMap g = grad_logits;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    if (auto* pool = std::get_if<MaxPool>(&layers_[i])) {
      g = pool->backward(g);
      continue;
    }
    auto& conv = std::get<DamConv>(layers_[i]);
    auto cg = conv.backward_weights(g, 0);
    block -= 2;
    grads[block].assign(cg.weights.values().begin(), cg.weights.values().end());
    grads[block + 1] = std::move(cg.bias);
    g = conv.backward_input(g);
  }
  return g;
}

Real Network::regularization() const {
  std::vector<const WeightTensor*> weights;
  for (const auto* conv : conv_layers()) weights.push_back(&conv->weights());
  return spec_.loss.lambda * l2_penalty(weights);
}

LossBreakdown Network::evaluate_loss(const FeatureMap& input, const DepthMap& depth, const LabelMap& labels) {
  const auto prob = forward(input, depth);
  LossBreakdown b;
  b.data = logistic_loss(prob, labels, spec_.loss).loss;
  b.regularization = regularization();
  b.total = b.data + b.regularization;
  return b;
}

std::vector<std::span<Real>> Network::parameter_blocks() {
  std::vector<std::span<Real>> blocks;
  for (auto* conv : conv_layers()) {
    blocks.emplace_back(conv->weights().values());
    blocks.emplace_back(conv->bias());
  }
  return blocks;
}

std::vector<std::span<const Real>> Network::parameter_blocks() const {
  std::vector<std::span<const Real>> blocks;
  for (const auto* conv : conv_layers()) {
    blocks.emplace_back(conv->weights().values());
    blocks.emplace_back(conv->bias());
  }
  return blocks;
}

std::vector<std::string> Network::parameter_names() const {
  std::vector<std::string> names;
  std::size_t k = 0;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (!std::holds_alternative<DamConv>(layers_[i])) continue;
    names.push_back("conv" + std::to_string(k) + ".weight");
    names.push_back("conv" + std::to_string(k) + ".bias");
    ++k;
  }
  return names;
}

std::vector<bool> Network::decayed_blocks() const {
  std::vector<bool> decayed;
  for (std::size_t k = 0; k < conv_layers().size(); ++k) {
    decayed.push_back(true);
    decayed.push_back(false);
  }
  return decayed;
}

std::vector<DamConv*> Network::conv_layers() {
  std::vector<DamConv*> out;
  for (auto& l : layers_) {
    if (auto* c = std::get_if<DamConv>(&l)) out.push_back(c);
  }
  return out;
}

std::vector<const DamConv*> Network::conv_layers() const {
  std::vector<const DamConv*> out;
  for (const auto& l : layers_) {
    if (const auto* c = std::get_if<DamConv>(&l)) out.push_back(c);
  }
  return out;
}

Real Network::min_kink_margin() const {
  Real margin = std::numeric_limits<Real>::infinity();
  for (const auto& l : layers_) {
    std::visit(Overloaded{[&](const DamConv& c) {
                            if (c.activation() == Activation::relu && c.has_cache()) {
                              margin = std::min(margin, c.min_abs_preactivation());
                            }
                          },
                          [&](const MaxPool& p) { margin = std::min(margin, p.min_tie_margin()); }},
               l);
  }
  return margin;
}

std::size_t worker_count() {
  std::size_t hw = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("DAM_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v >= 1) hw = static_cast<std::size_t>(v);
  }
  return hw;
}

TrainRecord train_step(Network& net, std::span<const Sample* const> batch, Sgd& optimizer) {
  if (batch.empty()) throw Error("train_step: empty batch");
  const auto start = std::chrono::steady_clock::now();

  std::vector<SampleGradients> results(batch.size());
  const std::size_t workers = std::min(worker_count(), batch.size());
  if (workers <= 1) {
    for (std::size_t i = 0; i < batch.size(); ++i) {
      results[i] = net.forward_backward(batch[i]->input, batch[i]->depth, batch[i]->labels);
    }
  } else {
    std::vector<Network> replicas(workers, net);
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < workers; ++w) {
      threads.emplace_back([&, w] {
        for (std::size_t i = w; i < batch.size(); i += workers) {
          results[i] = replicas[w].forward_backward(batch[i]->input, batch[i]->depth, batch[i]->labels);
        }
      });
    }
    for (auto& t : threads) t.join();
  }

  const auto decayed = net.decayed_blocks();
  auto blocks = net.parameter_blocks();
  const Real inv_batch = 1.0 / static_cast<Real>(batch.size());
  std::vector<std::vector<Real>> grads(blocks.size());
  TrainRecord record;
  for (const auto& r : results) record.data_loss += r.data_loss;
  record.data_loss *= inv_batch;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    grads[b].assign(blocks[b].size(), 0);
    for (const auto& r : results) {
      for (std::size_t k = 0; k < grads[b].size(); ++k) grads[b][k] += r.params[b][k];
    }
    for (std::size_t k = 0; k < grads[b].size(); ++k) {
      grads[b][k] *= inv_batch;
      if (decayed[b]) grads[b][k] += net.spec().loss.lambda * blocks[b][k];
    }
  }
  record.reg_loss = net.regularization();
  record.loss = record.data_loss + record.reg_loss;
  if (!std::isfinite(record.loss)) {
    throw NumericError("train_step: non-finite loss at iteration " + std::to_string(optimizer.iter() + 1) +
                       " (data " + std::to_string(record.data_loss) + ", regularization " +
                       std::to_string(record.reg_loss) + ")");
  }

  record.lr = optimizer.current_lr();
  std::vector<ParamSlot> slots;
  for (std::size_t b = 0; b < blocks.size(); ++b) slots.push_back({blocks[b], grads[b]});
  optimizer.step(slots);
  record.iter = optimizer.iter();
  record.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return record;
}

}  // namespace dam
