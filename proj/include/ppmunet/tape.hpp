// Copyright (C) 2026 The ppmunet Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef PPMUNET_TAPE_HPP
#define PPMUNET_TAPE_HPP

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ppmunet/ops.hpp"
#include "ppmunet/tensor.hpp"

namespace ppmunet {

/// A named trainable tensor. Biases are stored as (c, 1, 1, 1).
template <typename T>
struct Param {
  std::string name;
  Tensor4<T> value;
  bool is_vector = false;
};

/// Parameters in canonical build order.
template <typename T>
class ParamRegistry {
 public:
  std::size_t add(std::string name, Tensor4<T> value, bool is_vector) {
    if (index_.contains(name)) throw ValidationError("duplicate parameter name " + name);
    index_.emplace(name, params_.size());
    params_.push_back(Param<T>{std::move(name), std::move(value), is_vector});
    return params_.size() - 1;
  }

  std::size_t size() const noexcept { return params_.size(); }
  Param<T>& operator[](std::size_t i) { return params_[i]; }
  const Param<T>& operator[](std::size_t i) const { return params_[i]; }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  std::optional<std::size_t> find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  std::size_t at(const std::string& name) const {
    auto i = find(name);
    if (!i) throw ValidationError("no parameter named " + name);
    return *i;
  }

  std::size_t total_count() const noexcept {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  template <typename U>
  ParamRegistry<U> cast() const {
    ParamRegistry<U> out;
    for (const auto& p : params_) out.add(p.name, p.value.template cast<U>(), p.is_vector);
    return out;
  }

 private:
  std::vector<Param<T>> params_;
  std::map<std::string, std::size_t> index_;
};

/// One gradient tensor per registry entry, same shapes.
template <typename T>
using Gradients = std::vector<Tensor4<T>>;

template <typename T>
Gradients<T> zero_gradients(const ParamRegistry<T>& reg) {
  Gradients<T> g;
  g.reserve(reg.size());
  for (const auto& p : reg) g.emplace_back(p.value.shape());
  return g;
}

enum class OpKind : std::uint8_t {
  conv2d,
  tconv2x2,
  relu,
  maxpool2x2,
  adaptive_avg_pool,
  upsample_nearest,
  concat_channels,
  softmax_channels,
};

struct TapeEntry {
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
  OpKind kind;
  std::vector<std::size_t> inputs;
  std::size_t output = npos;
  std::size_t weight = npos;
  std::size_t bias = npos;
  std::vector<std::uint32_t> saved;  // maxpool argmax indices
};

/// Records the forward pass (node values plus op list) and replays adjoints in
/// reverse. Bound to one model instance at one parameter version; an optimizer
/// step makes it stale.
template <typename T>
class OpTape {
 public:
  OpTape(const ParamRegistry<T>& params, std::uint64_t owner, std::uint64_t version)
      : params_(&params), owner_(owner), version_(version) {}

  std::uint64_t owner() const noexcept { return owner_; }
  std::uint64_t version() const noexcept { return version_; }
  const std::vector<TapeEntry>& entries() const noexcept { return entries_; }
  std::size_t node_count() const noexcept { return nodes_.size(); }
  const Tensor4<T>& value(std::size_t node) const { return nodes_.at(node); }

  std::size_t input(Tensor4<T> x) { return push(std::move(x)); }

  void label(std::size_t node, std::string name) { labels_[std::move(name)] = node; }
  const std::map<std::string, std::size_t>& labels() const noexcept { return labels_; }

  std::size_t conv2d(std::size_t x, std::size_t weight, std::size_t bias) {
    auto y = ppmunet::conv2d(nodes_[x], p(weight), p(bias).data());
    return record(OpKind::conv2d, {x}, std::move(y), weight, bias);
  }
  std::size_t tconv2x2(std::size_t x, std::size_t weight, std::size_t bias) {
    auto y = ppmunet::tconv2x2(nodes_[x], p(weight), p(bias).data());
    return record(OpKind::tconv2x2, {x}, std::move(y), weight, bias);
  }
  std::size_t relu(std::size_t x) { return record(OpKind::relu, {x}, ppmunet::relu(nodes_[x])); }
  std::size_t maxpool2x2(std::size_t x) {
    auto r = ppmunet::maxpool2x2(nodes_[x]);
    const std::size_t out = record(OpKind::maxpool2x2, {x}, std::move(r.out));
    entries_.back().saved = std::move(r.argmax);
    return out;
  }
  std::size_t adaptive_avg_pool(std::size_t x, std::size_t bins) {
    return record(OpKind::adaptive_avg_pool, {x}, ppmunet::adaptive_avg_pool(nodes_[x], bins));
  }
  std::size_t upsample_nearest(std::size_t x, std::size_t h, std::size_t w) {
    return record(OpKind::upsample_nearest, {x}, ppmunet::upsample_nearest(nodes_[x], h, w));
  }
  std::size_t concat_channels(const std::vector<std::size_t>& parts) {
    std::vector<const Tensor4<T>*> ptrs;
    for (auto i : parts) ptrs.push_back(&nodes_[i]);
    auto y = ppmunet::concat_channels<T>(std::span<const Tensor4<T>* const>(ptrs));
    return record(OpKind::concat_channels, parts, std::move(y));
  }
  std::size_t softmax_channels(std::size_t x) {
    return record(OpKind::softmax_channels, {x}, ppmunet::softmax_channels(nodes_[x]));
  }

  /// Reverse sweep from `out` seeded with `dout`. Returns parameter gradients;
  /// gradients of the tape's input nodes are written to `input_grads` if given.
  Gradients<T> backward(std::size_t out, const Tensor4<T>& dout,
                        std::map<std::size_t, Tensor4<T>>* input_grads = nullptr) const {
    if (dout.shape() != nodes_.at(out).shape())
      throw ValidationError("backward: output gradient shape " + to_string(dout.shape()) + " does not match " +
                            to_string(nodes_.at(out).shape()));
    Gradients<T> grads = zero_gradients(*params_);
    std::vector<std::optional<Tensor4<T>>> g(nodes_.size());
    g[out] = dout;
    auto grad_of = [&](std::size_t node) -> Tensor4<T>& {
      if (!g[node]) g[node].emplace(nodes_[node].shape());
      return *g[node];
    };
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      const TapeEntry& e = *it;
      if (!g[e.output]) continue;
      const Tensor4<T>& dy = *g[e.output];
      switch (e.kind) {
        case OpKind::conv2d: {
          Tensor4<T>* dx = is_leaf(e.inputs[0]) && input_grads == nullptr ? nullptr : &grad_of(e.inputs[0]);
          ppmunet::conv2d_backward(nodes_[e.inputs[0]], p(e.weight), dy, dx, grads[e.weight], grads[e.bias].data());
          break;
        }
        case OpKind::tconv2x2:
          ppmunet::tconv2x2_backward(nodes_[e.inputs[0]], p(e.weight), dy, &grad_of(e.inputs[0]), grads[e.weight],
                                     grads[e.bias].data());
          break;
        case OpKind::relu:
          ppmunet::relu_backward(nodes_[e.inputs[0]], dy, grad_of(e.inputs[0]));
          break;
        case OpKind::maxpool2x2:
          ppmunet::maxpool2x2_backward<T>(e.saved, dy, grad_of(e.inputs[0]));
          break;
        case OpKind::adaptive_avg_pool:
          ppmunet::adaptive_avg_pool_backward(dy, grad_of(e.inputs[0]));
          break;
        case OpKind::upsample_nearest:
          ppmunet::upsample_nearest_backward(dy, grad_of(e.inputs[0]));
          break;
        case OpKind::concat_channels: {
          std::vector<Tensor4<T>*> parts;
          for (auto i : e.inputs) parts.push_back(&grad_of(i));
          ppmunet::concat_channels_backward<T>(dy, std::span<Tensor4<T>* const>(parts));
          break;
        }
        case OpKind::softmax_channels:
          ppmunet::softmax_channels_backward(nodes_[e.output], dy, grad_of(e.inputs[0]));
          break;
      }
      g[e.output].reset();
    }
    if (input_grads != nullptr)
      for (std::size_t i = 0; i < nodes_.size(); ++i)
        if (is_leaf(i) && g[i]) input_grads->insert_or_assign(i, std::move(*g[i]));
    return grads;
  }

 private:
  const Tensor4<T>& p(std::size_t i) const { return (*params_)[i].value; }

  bool is_leaf(std::size_t node) const { return producer_[node] == TapeEntry::npos; }

  std::size_t push(Tensor4<T> v) {
    if (!v.all_finite()) throw RuntimeFailure("non-finite value produced in forward pass");
    nodes_.push_back(std::move(v));
    producer_.push_back(TapeEntry::npos);
    return nodes_.size() - 1;
  }

  std::size_t record(OpKind kind, std::vector<std::size_t> inputs, Tensor4<T> y,
                     std::size_t weight = TapeEntry::npos, std::size_t bias = TapeEntry::npos) {
    const std::size_t out = push(std::move(y));
    producer_[out] = entries_.size();
    entries_.push_back(TapeEntry{kind, std::move(inputs), out, weight, bias, {}});
    return out;
  }

  const ParamRegistry<T>* params_;
  std::uint64_t owner_;
  std::uint64_t version_;
  std::vector<Tensor4<T>> nodes_;
  std::vector<std::size_t> producer_;
  std::vector<TapeEntry> entries_;
  std::map<std::string, std::size_t> labels_;
};

}  // namespace ppmunet

#endif  // PPMUNET_TAPE_HPP
