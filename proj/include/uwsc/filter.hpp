#pragma once

#include <array>

#include "uwsc/autodiff.hpp"

namespace uwsc {

struct FilterConfig {
  int width = 32;

  static FilterConfig toy() { return {4}; }
  void validate() const {
    if (width <= 0) throw PreconditionError("filter width must be positive");
  }
  bool operator==(const FilterConfig&) const = default;
};

/// Multi-kernel block: (k3s1 + k1s1) in parallel, summed, then k3s1 -> PReLU -> k1s1.
template <class T>
struct Mkcb {
  ad::Conv2d<T> k3, k1, mix3, mix1;
  ad::PRelu<T> act;

  Mkcb() = default;
  Mkcb(int w, Rng& rng) : k3(w, w, 3, 1, rng), k1(w, w, 1, 1, rng), mix3(w, w, 3, 1, rng), mix1(w, w, 1, 1, rng), act(w) {}

  ad::Tensor<T> operator()(const ad::Tensor<T>& x) const { return mix1(act(mix3(ad::add(k3(x), k1(x))))); }
  void collect(const std::string& p, ad::ParamList<T>& out) const {
    k3.collect(p + ".k3", out);
    k1.collect(p + ".k1", out);
    mix3.collect(p + ".mix3", out);
    act.collect(p + ".act", out);
    mix1.collect(p + ".mix1", out);
  }
};

/// out = x * w + x with w = channel_softmax(MKCB(MKCB(x))).
template <class T>
struct Attention {
  Mkcb<T> first, second;

  Attention() = default;
  Attention(int w, Rng& rng) : first(w, rng), second(w, rng) {}

  ad::Tensor<T> weights(const ad::Tensor<T>& x) const { return ad::channel_softmax(second(first(x))); }
  ad::Tensor<T> operator()(const ad::Tensor<T>& x) const { return ad::add(ad::mul(x, weights(x)), x); }
  void collect(const std::string& p, ad::ParamList<T>& out) const {
    first.collect(p + ".mkcb0", out);
    second.collect(p + ".mkcb1", out);
  }
};

template <class T>
struct DownBlock {
  ad::Conv2d<T> reduce, refine;
  ad::PRelu<T> act;

  DownBlock() = default;
  DownBlock(int w, Rng& rng) : reduce(w, w, 3, 2, rng), refine(w, w, 3, 1, rng), act(w) {}

  ad::Tensor<T> operator()(const ad::Tensor<T>& x) const { return refine(act(reduce(x))); }
  void collect(const std::string& p, ad::ParamList<T>& out) const {
    reduce.collect(p + ".reduce", out);
    act.collect(p + ".act", out);
    refine.collect(p + ".refine", out);
  }
};

template <class T>
struct UpBlock {
  ad::TConv2d<T> expand, refine;
  ad::PRelu<T> act;

  UpBlock() = default;
  UpBlock(int w, Rng& rng) : expand(w, w, 3, 2, rng), refine(w, w, 3, 1, rng), act(w) {}

  ad::Tensor<T> operator()(const ad::Tensor<T>& x) const { return refine(act(expand(x))); }
  void collect(const std::string& p, ad::ParamList<T>& out) const {
    expand.collect(p + ".expand", out);
    act.collect(p + ".act", out);
    refine.collect(p + ".refine", out);
  }
};

/// Detail refinement: two downsampling blocks and two upsampling blocks with
/// attention between them; skips are concatenated and merged back by k1s1 convs.
template <class T>
struct Drb {
  DownBlock<T> down1, down2;
  UpBlock<T> up1, up2;
  std::array<Attention<T>, 3> attn;
  ad::Conv2d<T> merge1, merge2;

  Drb() = default;
  Drb(int w, Rng& rng)
      : down1(w, rng), down2(w, rng), up1(w, rng), up2(w, rng),
        attn{Attention<T>(w, rng), Attention<T>(w, rng), Attention<T>(w, rng)},
        merge1(2 * w, w, 1, 1, rng), merge2(2 * w, w, 1, 1, rng) {}

  ad::Tensor<T> operator()(const ad::Tensor<T>& x) const {
    if (x.rank() != 4 || x.h() % 4 != 0 || x.w() % 4 != 0)
      throw ShapeError("detail branch needs spatial dims divisible by 4, got " + ad::shape_str(x.shape()));
    const auto d1 = down1(x);
    const auto d2 = down2(attn[0](d1));
    const auto u1 = up1(merge1(ad::concat_channels<T>({attn[1](d2), d2})));
    return up2(merge2(ad::concat_channels<T>({attn[2](u1), d1})));
  }
  void collect(const std::string& p, ad::ParamList<T>& out) const {
    down1.collect(p + ".down1", out);
    down2.collect(p + ".down2", out);
    for (std::size_t i = 0; i < 3; ++i) attn[i].collect(p + ".attn" + std::to_string(i), out);
    merge1.collect(p + ".merge1", out);
    up1.collect(p + ".up1", out);
    merge2.collect(p + ".merge2", out);
    up2.collect(p + ".up2", out);
  }
};

/// Rough filtering: attention, four conv -> PReLU -> conv blocks, attention, plus a global skip.
template <class T>
struct Rfb {
  static constexpr int kBlocks = 4;
  Attention<T> head, tail;
  std::array<ad::Conv2d<T>, kBlocks> first, second;
  std::array<ad::PRelu<T>, kBlocks> act;

  Rfb() = default;
  Rfb(int w, Rng& rng) : head(w, rng) {
    for (std::size_t i = 0; i < kBlocks; ++i) {
      first[i] = ad::Conv2d<T>(w, w, 3, 1, rng);
      act[i] = ad::PRelu<T>(w);
      second[i] = ad::Conv2d<T>(w, w, 3, 1, rng);
    }
    tail = Attention<T>(w, rng);
  }

  ad::Tensor<T> operator()(const ad::Tensor<T>& x) const {
    auto h = head(x);
    for (std::size_t i = 0; i < kBlocks; ++i) h = second[i](act[i](first[i](h)));
    return ad::add(tail(h), x);
  }
  void collect(const std::string& p, ad::ParamList<T>& out) const {
    head.collect(p + ".head", out);
    for (std::size_t i = 0; i < kBlocks; ++i) {
      const auto s = p + ".block" + std::to_string(i);
      first[i].collect(s + ".a", out);
      act[i].collect(s + ".act", out);
      second[i].collect(s + ".b", out);
    }
    tail.collect(p + ".tail", out);
  }
};

/// Dual-branch restoration filter on RGB tensors.
template <class T>
struct FilterModel {
  /// The output projection starts small so an untrained filter emits near-zero images.
  static constexpr double kOutputInitScale = 0.1;

  FilterConfig config;
  ad::Conv2d<T> project_in, project_out;
  Drb<T> drb;
  Rfb<T> rfb;

  FilterModel() = default;
  FilterModel(const FilterConfig& c, std::uint64_t seed) : config(c) {
    c.validate();
    Rng rng(seed);
    project_in = ad::Conv2d<T>(3, c.width, 3, 1, rng);
    drb = Drb<T>(c.width, rng);
    rfb = Rfb<T>(c.width, rng);
    project_out = ad::Conv2d<T>(c.width, 3, 3, 1, rng);
    for (auto& v : project_out.weight.data()) v *= static_cast<T>(kOutputInitScale);
  }

  ad::Tensor<T> operator()(const ad::Tensor<T>& x) const {
    if (x.rank() != 4 || x.c() != 3) throw ShapeError("filter expects (B,3,H,W), got " + ad::shape_str(x.shape()));
    const auto p = project_in(x);
    return project_out(ad::add(drb(p), rfb(p)));
  }
  void collect(const std::string& p, ad::ParamList<T>& out) const {
    project_in.collect(p + ".in", out);
    drb.collect(p + ".drb", out);
    rfb.collect(p + ".rfb", out);
    project_out.collect(p + ".out", out);
  }
  ad::ParamList<T> parameters(const std::string& p = "filter") const {
    ad::ParamList<T> out;
    collect(p, out);
    return out;
  }
};

}  // namespace uwsc
