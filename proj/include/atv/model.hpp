#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "atv/batchnorm.hpp"
#include "atv/conv.hpp"
#include "atv/ops.hpp"
#include "atv/params.hpp"
#include "atv/rng.hpp"

namespace atv {

// Mini dilated-residual backbone configuration. The only hard contract is
// output stride 8: stem stride times the stage strides must multiply to 8.
struct BackboneConfig {
  int input_channels = 3;
  int stem_channels = 16;
  std::vector<int> stage_channels{32, 64, 64};
  std::vector<int> blocks_per_stage{1, 1, 1};
  std::vector<int> stage_strides{2, 2, 1};
  std::vector<int> stage_dilations{1, 1, 2};

  int output_channels() const { return stage_channels.back(); }

  void validate() const {
    const size_t s = stage_channels.size();
    detail::require(s >= 1 && blocks_per_stage.size() == s && stage_strides.size() == s &&
                        stage_dilations.size() == s,
                    "BackboneConfig: stage lists must be non-empty and equal length");
    detail::require(input_channels >= 1 && stem_channels >= 1, "BackboneConfig: bad channel counts");
    int os = 2;  // stem stride
    for (size_t i = 0; i < s; ++i) {
      detail::require(stage_channels[i] >= 1 && blocks_per_stage[i] >= 1, "BackboneConfig: bad stage");
      detail::require(stage_strides[i] == 1 || stage_strides[i] == 2, "BackboneConfig: stage stride must be 1 or 2");
      detail::require(stage_dilations[i] >= 1, "BackboneConfig: bad dilation");
      if (stage_strides[i] == 1) {
        detail::require(stage_dilations[i] >= 2,
                        "BackboneConfig: stride-1 stage after downsampling needs dilation >= 2");
      }
      os *= stage_strides[i];
    }
    detail::require(os == 8, "BackboneConfig: effective strides must multiply to output stride 8");
  }
};

// Full network: parameter store plus the handful of architecture scalars
// that determine every tensor shape in it.
template <typename T>
struct ATVNet {
  BackboneConfig backbone;
  int c_head = 64;        // channel width of the three views and the coordination block
  int c_gate = 16;        // gate hidden width
  int c_se = 16;          // recalibration hidden width
  int scout_dilation = 2; // dilation of the 5x5 scout view
  int num_classes = 5;
  ParamStore<T> params;   // trainable
  ParamStore<T> state;    // batchnorm running statistics
  std::vector<std::string> no_decay;  // biases and batchnorm affine parameters
};

// Per-image fusion weights on the 3-simplex.
template <typename T>
struct GateOutput {
  Tensor<T> alpha;  // (N,3,1,1): [micro, local, scout]
};

// Activations cached by a forward pass; model_backward replays the graph
// from these. alpha is also the inspection surface for the gate.
template <typename T>
struct ForwardTrace {
  Mode mode = Mode::train;
  bool fixed_gate = false;
  std::unordered_map<std::string, Tensor<T>> act;
  std::unordered_map<std::string, BatchNormCache<T>> bn;
  Tensor<T> alpha;
};

template <typename T>
struct ForwardOptions {
  Mode mode = Mode::eval;
  bool update_running = true;  // train mode only: fold batch stats into running stats
  bool fixed_gate = false;     // ablation: alpha fixed at 1/3, gate not exercised
};

namespace detail {

template <typename T>
void register_conv(ATVNet<T>& net, Rng& rng, const std::string& prefix, int64_t out_ch, int64_t in_ch,
                   int64_t k, bool bias) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(in_ch * k * k));
  Tensor<T> w(Shape{out_ch, in_ch, k, k});
  for (int64_t i = 0; i < w.size(); ++i) w[i] = static_cast<T>(rng.normal(0.0, stddev));
  net.params.add(prefix + ".weight", std::move(w));
  if (bias) {
    net.params.add(prefix + ".bias", Tensor<T>(Shape{out_ch}));
    net.no_decay.push_back(prefix + ".bias");
  }
}

template <typename T>
void register_bn(ATVNet<T>& net, const std::string& prefix, int64_t ch) {
  net.params.add(prefix + ".gamma", constant<T>(Shape{ch}, T(1)));
  net.params.add(prefix + ".beta", Tensor<T>(Shape{ch}));
  net.state.add(prefix + ".running_mean", Tensor<T>(Shape{ch}));
  net.state.add(prefix + ".running_var", Tensor<T>(Shape{ch}));
  net.no_decay.push_back(prefix + ".gamma");
  net.no_decay.push_back(prefix + ".beta");
}

template <typename T>
Conv2DParams<T> conv_at(const ATVNet<T>& net, const std::string& prefix, int stride, int padding,
                        int dilation) {
  Conv2DParams<T> p;
  p.weight = net.params.at(prefix + ".weight");
  if (net.params.has(prefix + ".bias")) p.bias = net.params.at(prefix + ".bias");
  p.stride = stride;
  p.padding = padding;
  p.dilation = dilation;
  return p;
}

template <typename T>
BatchNorm2DParams<T> bn_at(const ATVNet<T>& net, const std::string& prefix) {
  BatchNorm2DParams<T> p;
  p.gamma = net.params.at(prefix + ".gamma");
  p.beta = net.params.at(prefix + ".beta");
  p.running_mean = net.state.at(prefix + ".running_mean");
  p.running_var = net.state.at(prefix + ".running_var");
  return p;
}

// Forward through conv + bn (+ the running-stat writeback that makes the
// state store authoritative).
template <typename T>
Tensor<T> conv_bn(ATVNet<T>& net, const Tensor<T>& x, const std::string& conv_prefix,
                  const std::string& bn_prefix, int stride, int padding, int dilation,
                  const ForwardOptions<T>& opts, ForwardTrace<T>* trace) {
  if (trace) trace->act[conv_prefix + ".x"] = x;
  Tensor<T> y = conv2d_forward(x, conv_at(net, conv_prefix, stride, padding, dilation));
  BatchNorm2DParams<T> bn = bn_at(net, bn_prefix);
  BatchNormCache<T> cache;
  const bool update = opts.mode == Mode::train && opts.update_running;
  y = batchnorm_forward(y, bn, opts.mode, update, trace ? &cache : nullptr);
  if (update) {
    net.state.at(bn_prefix + ".running_mean") = bn.running_mean;
    net.state.at(bn_prefix + ".running_var") = bn.running_var;
  }
  if (trace) trace->bn[bn_prefix] = std::move(cache);
  return y;
}

// Reverse of conv_bn. Consumes d(bn output), emits d(conv input) and
// accumulates parameter gradients.
template <typename T>
Tensor<T> conv_bn_backward(const ATVNet<T>& net, const ForwardTrace<T>& trace,
                           const std::string& conv_prefix, const std::string& bn_prefix,
                           int stride, int padding, int dilation, const Tensor<T>& dy,
                           ParamStore<T>& grads) {
  const BatchNormGrads<T> bg =
      batchnorm_backward(trace.bn.at(bn_prefix), net.params.at(bn_prefix + ".gamma"), dy);
  grads.accumulate(bn_prefix + ".gamma", bg.dgamma);
  grads.accumulate(bn_prefix + ".beta", bg.dbeta);
  const Tensor<T>& x = trace.act.at(conv_prefix + ".x");
  const Conv2DGrads<T> cg =
      conv2d_backward(x, conv_at(net, conv_prefix, stride, padding, dilation), bg.dx);
  grads.accumulate(conv_prefix + ".weight", cg.dweight);
  if (!cg.dbias.empty()) grads.accumulate(conv_prefix + ".bias", cg.dbias);
  return cg.dx;
}

template <typename T>
bool block_has_projection(const ATVNet<T>& net, const std::string& prefix) {
  return net.params.has(prefix + ".down.conv.weight");
}

// y = relu(bn2(conv2(relu(bn1(conv1(x))))) + shortcut(x))
template <typename T>
Tensor<T> residual_block_forward(ATVNet<T>& net, const Tensor<T>& x, const std::string& prefix,
                                 int stride, int dilation, const ForwardOptions<T>& opts,
                                 ForwardTrace<T>* trace) {
  Tensor<T> h = conv_bn(net, x, prefix + ".conv1", prefix + ".bn1", stride, dilation, dilation, opts, trace);
  if (trace) trace->act[prefix + ".relu1.pre"] = h;
  h = relu(h);
  h = conv_bn(net, h, prefix + ".conv2", prefix + ".bn2", 1, dilation, dilation, opts, trace);
  Tensor<T> shortcut =
      block_has_projection(net, prefix)
          ? conv_bn(net, x, prefix + ".down.conv", prefix + ".down.bn", stride, 0, 1, opts, trace)
          : x;
  Tensor<T> sum = add(h, shortcut);
  if (trace) trace->act[prefix + ".out.pre"] = sum;
  return relu(sum);
}

template <typename T>
Tensor<T> residual_block_backward(const ATVNet<T>& net, const ForwardTrace<T>& trace,
                                  const std::string& prefix, int stride, int dilation,
                                  const Tensor<T>& dy, ParamStore<T>& grads) {
  Tensor<T> dsum = relu_backward(trace.act.at(prefix + ".out.pre"), dy);
  // main path
  Tensor<T> dh = conv_bn_backward(net, trace, prefix + ".conv2", prefix + ".bn2", 1, dilation,
                                  dilation, dsum, grads);
  dh = relu_backward(trace.act.at(prefix + ".relu1.pre"), dh);
  Tensor<T> dx = conv_bn_backward(net, trace, prefix + ".conv1", prefix + ".bn1", stride, dilation,
                                  dilation, dh, grads);
  // shortcut path
  if (block_has_projection(net, prefix)) {
    Tensor<T> ds = conv_bn_backward(net, trace, prefix + ".down.conv", prefix + ".down.bn", stride,
                                    0, 1, dsum, grads);
    dx = add(dx, ds);
  } else {
    dx = add(dx, dsum);
  }
  return dx;
}

}  // namespace detail

// Builds a freshly He-initialized network. Deterministic in seed: identical
// seeds give bitwise-identical parameter stores.
template <typename T>
ATVNet<T> build_model(const BackboneConfig& cfg, int c_head, int c_gate, int scout_dilation,
                      int num_classes, uint64_t seed) {
  cfg.validate();
  detail::require(c_head >= 1 && scout_dilation >= 1 && num_classes >= 2,
                  "build_model: bad head configuration");
  ATVNet<T> net;
  net.backbone = cfg;
  net.c_head = c_head;
  net.c_gate = c_gate > 0 ? c_gate : std::max(cfg.output_channels() / 4, 8);
  net.c_se = std::max(c_head / 4, 8);
  net.scout_dilation = scout_dilation;
  net.num_classes = num_classes;

  Rng rng(seed);
  detail::register_conv(net, rng, "backbone.stem.conv", cfg.stem_channels, cfg.input_channels, 3, false);
  detail::register_bn(net, "backbone.stem.bn", cfg.stem_channels);
  int in_ch = cfg.stem_channels;
  for (size_t s = 0; s < cfg.stage_channels.size(); ++s) {
    const int out_ch = cfg.stage_channels[s];
    for (int b = 0; b < cfg.blocks_per_stage[s]; ++b) {
      const std::string prefix =
          "backbone.stage" + std::to_string(s + 1) + ".block" + std::to_string(b);
      const int stride = (b == 0) ? cfg.stage_strides[s] : 1;
      detail::register_conv(net, rng, prefix + ".conv1", out_ch, in_ch, 3, false);
      detail::register_bn(net, prefix + ".bn1", out_ch);
      detail::register_conv(net, rng, prefix + ".conv2", out_ch, out_ch, 3, false);
      detail::register_bn(net, prefix + ".bn2", out_ch);
      if (stride != 1 || in_ch != out_ch) {
        detail::register_conv(net, rng, prefix + ".down.conv", out_ch, in_ch, 1, false);
        detail::register_bn(net, prefix + ".down.bn", out_ch);
      }
      in_ch = out_ch;
    }
  }
  const int c = cfg.output_channels();
  detail::register_conv(net, rng, "view_micro", c_head, c, 1, true);
  detail::register_conv(net, rng, "view_local", c_head, c, 3, true);
  detail::register_conv(net, rng, "view_scout", c_head, c, 5, true);
  detail::register_conv(net, rng, "gate.conv1", net.c_gate, c, 1, true);
  detail::register_conv(net, rng, "gate.conv2", 3, net.c_gate, 1, true);
  detail::register_conv(net, rng, "coord.conv1", c_head, c_head, 3, true);
  detail::register_conv(net, rng, "coord.conv2", c_head, c_head, 3, true);
  detail::register_conv(net, rng, "coord.se1", net.c_se, c_head, 1, true);
  detail::register_conv(net, rng, "coord.se2", c_head, net.c_se, 1, true);
  detail::register_conv(net, rng, "classifier", num_classes, c_head, 1, true);
  return net;
}

template <typename T>
int64_t parameter_count(const ATVNet<T>& net) {
  return net.params.total_elements();
}

// Backbone: stem (3x3, stride 2) then the residual stages. Output spatial
// extent is exactly input/8.
template <typename T>
Tensor<T> backbone_forward(ATVNet<T>& net, const Tensor<T>& x, const ForwardOptions<T>& opts,
                           ForwardTrace<T>* trace) {
  detail::require(x.rank() == 4, "backbone_forward: input must be (N,3,H,W)");
  detail::require(x.dim(1) == net.backbone.input_channels, "backbone_forward: channel mismatch");
  detail::require(x.dim(2) % 8 == 0 && x.dim(3) % 8 == 0,
                  "backbone_forward: input extent must be divisible by 8, got " + x.shape().str());
  Tensor<T> h = detail::conv_bn(net, x, "backbone.stem.conv", "backbone.stem.bn", 2, 1, 1, opts, trace);
  if (trace) trace->act["backbone.stem.relu.pre"] = h;
  h = relu(h);
  const BackboneConfig& cfg = net.backbone;
  for (size_t s = 0; s < cfg.stage_channels.size(); ++s) {
    for (int b = 0; b < cfg.blocks_per_stage[s]; ++b) {
      const std::string prefix =
          "backbone.stage" + std::to_string(s + 1) + ".block" + std::to_string(b);
      const int stride = (b == 0) ? cfg.stage_strides[s] : 1;
      h = detail::residual_block_forward(net, h, prefix, stride, cfg.stage_dilations[s], opts, trace);
    }
  }
  return h;
}

template <typename T>
Tensor<T> backbone_backward(const ATVNet<T>& net, const ForwardTrace<T>& trace, const Tensor<T>& dF,
                            ParamStore<T>& grads) {
  const BackboneConfig& cfg = net.backbone;
  Tensor<T> d = dF;
  for (size_t si = cfg.stage_channels.size(); si-- > 0;) {
    for (int b = cfg.blocks_per_stage[si] - 1; b >= 0; --b) {
      const std::string prefix =
          "backbone.stage" + std::to_string(si + 1) + ".block" + std::to_string(b);
      const int stride = (b == 0) ? cfg.stage_strides[si] : 1;
      d = detail::residual_block_backward(net, trace, prefix, stride, cfg.stage_dilations[si], d, grads);
    }
  }
  d = relu_backward(trace.act.at("backbone.stem.relu.pre"), d);
  return detail::conv_bn_backward(net, trace, "backbone.stem.conv", "backbone.stem.bn", 2, 1, 1, d, grads);
}

// The three receptive-field views: 1x1 micro, 3x3 local, dilated 5x5 scout.
// Padding keeps all three outputs at the backbone's spatial extent.
template <typename T>
struct TripleView {
  Tensor<T> micro, local, scout;
};

template <typename T>
TripleView<T> triple_view(const ATVNet<T>& net, const Tensor<T>& f, ForwardTrace<T>* trace) {
  if (trace) trace->act["head.f"] = f;
  TripleView<T> v;
  v.micro = conv2d_forward(f, detail::conv_at(net, "view_micro", 1, 0, 1));
  v.local = conv2d_forward(f, detail::conv_at(net, "view_local", 1, 1, 1));
  v.scout = conv2d_forward(f, detail::conv_at(net, "view_scout", 1, 2 * net.scout_dilation, net.scout_dilation));
  if (trace) {
    trace->act["head.f_micro"] = v.micro;
    trace->act["head.f_local"] = v.local;
    trace->act["head.f_scout"] = v.scout;
  }
  return v;
}

// GAP -> 1x1 conv -> relu -> 1x1 conv -> softmax; one weight triple per
// image, broadcast spatially at fusion time.
template <typename T>
GateOutput<T> decision_gate(const ATVNet<T>& net, const Tensor<T>& f, ForwardTrace<T>* trace) {
  Tensor<T> z = global_avg_pool(f);
  Tensor<T> h1 = conv2d_forward(z, detail::conv_at(net, "gate.conv1", 1, 0, 1));
  Tensor<T> h1r = relu(h1);
  Tensor<T> logits = conv2d_forward(h1r, detail::conv_at(net, "gate.conv2", 1, 0, 1));
  GateOutput<T> g{softmax_channels(logits)};
  if (trace) {
    trace->act["gate.z"] = std::move(z);
    trace->act["gate.h1pre"] = std::move(h1);
    trace->act["gate.h1"] = std::move(h1r);
    trace->alpha = g.alpha;
  }
  return g;
}

// F_tv = alpha_m F_m + alpha_l F_l + alpha_s F_s, per image.
template <typename T>
Tensor<T> fuse_views(const Tensor<T>& fm, const Tensor<T>& fl, const Tensor<T>& fs,
                     const Tensor<T>& alpha) {
  detail::require(fm.shape() == fl.shape() && fm.shape() == fs.shape(),
                  "fuse_views: view shapes differ");
  detail::require(alpha.rank() == 4 && alpha.dim(0) == fm.dim(0) && alpha.dim(1) == 3 &&
                      alpha.dim(2) == 1 && alpha.dim(3) == 1,
                  "fuse_views: alpha must be (N,3,1,1)");
  const int64_t n = fm.dim(0), plane = fm.dim(1) * fm.dim(2) * fm.dim(3);
  for (int64_t in = 0; in < n; ++in) {
    const T am = alpha.at(in, 0, 0, 0), al = alpha.at(in, 1, 0, 0), as = alpha.at(in, 2, 0, 0);
    detail::require(am >= T(0) && al >= T(0) && as >= T(0) &&
                        std::abs(static_cast<double>(am + al + as) - 1.0) < 1e-6,
                    "fuse_views: alpha row off the simplex");
  }
  Tensor<T> out(fm.shape());
  for (int64_t in = 0; in < n; ++in) {
    const T am = alpha.at(in, 0, 0, 0), al = alpha.at(in, 1, 0, 0), as = alpha.at(in, 2, 0, 0);
    const T* pm = fm.data() + in * plane;
    const T* pl = fl.data() + in * plane;
    const T* ps = fs.data() + in * plane;
    T* po = out.data() + in * plane;
    for (int64_t i = 0; i < plane; ++i) po[i] = am * pm[i] + al * pl[i] + as * ps[i];
  }
  ensure_finite(out, "fuse_views");
  return out;
}

template <typename T>
struct FuseGrads {
  Tensor<T> dmicro, dlocal, dscout, dalpha;
};

template <typename T>
FuseGrads<T> fuse_views_backward(const Tensor<T>& fm, const Tensor<T>& fl, const Tensor<T>& fs,
                                 const Tensor<T>& alpha, const Tensor<T>& dft) {
  const int64_t n = fm.dim(0), plane = fm.dim(1) * fm.dim(2) * fm.dim(3);
  FuseGrads<T> g;
  g.dmicro = Tensor<T>(fm.shape());
  g.dlocal = Tensor<T>(fl.shape());
  g.dscout = Tensor<T>(fs.shape());
  g.dalpha = Tensor<T>(alpha.shape());
  for (int64_t in = 0; in < n; ++in) {
    const T am = alpha.at(in, 0, 0, 0), al = alpha.at(in, 1, 0, 0), as = alpha.at(in, 2, 0, 0);
    const T* pm = fm.data() + in * plane;
    const T* pl = fl.data() + in * plane;
    const T* ps = fs.data() + in * plane;
    const T* pd = dft.data() + in * plane;
    T* gm = g.dmicro.data() + in * plane;
    T* gl = g.dlocal.data() + in * plane;
    T* gs = g.dscout.data() + in * plane;
    T sm = T(0), sl = T(0), ss = T(0);
    for (int64_t i = 0; i < plane; ++i) {
      gm[i] = am * pd[i];
      gl[i] = al * pd[i];
      gs[i] = as * pd[i];
      sm += pm[i] * pd[i];
      sl += pl[i] * pd[i];
      ss += ps[i] * pd[i];
    }
    g.dalpha.at(in, 0, 0, 0) = sm;
    g.dalpha.at(in, 1, 0, 0) = sl;
    g.dalpha.at(in, 2, 0, 0) = ss;
  }
  return g;
}

// Two 3x3 refinement convs with relu between, then scene-level channel
// recalibration: F_r = F' * sigmoid(se2(relu(se1(GAP(F'))))).
template <typename T>
Tensor<T> global_coordination(const ATVNet<T>& net, const Tensor<T>& ftv, ForwardTrace<T>* trace) {
  if (trace) trace->act["coord.in"] = ftv;
  Tensor<T> c1 = conv2d_forward(ftv, detail::conv_at(net, "coord.conv1", 1, 1, 1));
  if (trace) trace->act["coord.c1pre"] = c1;
  Tensor<T> c1r = relu(c1);
  if (trace) trace->act["coord.c1"] = c1r;
  Tensor<T> fprime = conv2d_forward(c1r, detail::conv_at(net, "coord.conv2", 1, 1, 1));
  Tensor<T> zc = global_avg_pool(fprime);
  Tensor<T> s1 = conv2d_forward(zc, detail::conv_at(net, "coord.se1", 1, 0, 1));
  Tensor<T> s1r = relu(s1);
  Tensor<T> s2 = conv2d_forward(s1r, detail::conv_at(net, "coord.se2", 1, 0, 1));
  Tensor<T> s = sigmoid(s2);
  // per-image per-channel scaling
  const int64_t n = fprime.dim(0), c = fprime.dim(1), hw = fprime.dim(2) * fprime.dim(3);
  Tensor<T> out(fprime.shape());
  for (int64_t in = 0; in < n; ++in) {
    for (int64_t ic = 0; ic < c; ++ic) {
      const T sv = s.at(in, ic, 0, 0);
      const T* pf = fprime.data() + fprime.offset(in, ic, 0, 0);
      T* po = out.data() + out.offset(in, ic, 0, 0);
      for (int64_t i = 0; i < hw; ++i) po[i] = pf[i] * sv;
    }
  }
  ensure_finite(out, "global_coordination");
  if (trace) {
    trace->act["coord.fprime"] = std::move(fprime);
    trace->act["coord.zc"] = std::move(zc);
    trace->act["coord.s1pre"] = std::move(s1);
    trace->act["coord.s1"] = std::move(s1r);
    trace->act["coord.s2pre"] = std::move(s2);
    trace->act["coord.s"] = std::move(s);
  }
  return out;
}

template <typename T>
struct ModelOutput {
  Tensor<T> logits;  // (N,K,H,W) at input resolution
  Tensor<T> alpha;   // (N,3,1,1)
  ForwardTrace<T> trace;
};

template <typename T>
Tensor<T> make_uniform_alpha(int64_t n) {
  Tensor<T> a(Shape{n, 3, 1, 1});
  std::fill(a.vec().begin(), a.vec().end(), T(1) / T(3));
  return a;
}

template <typename T>
ModelOutput<T> model_forward(ATVNet<T>& net, const Tensor<T>& x, const ForwardOptions<T>& opts,
                             bool want_trace = false) {
  ModelOutput<T> out;
  ForwardTrace<T>* tr = want_trace ? &out.trace : nullptr;
  out.trace.mode = opts.mode;
  out.trace.fixed_gate = opts.fixed_gate;

  Tensor<T> f = backbone_forward(net, x, opts, tr);
  TripleView<T> views = triple_view(net, f, tr);
  if (opts.fixed_gate) {
    out.alpha = make_uniform_alpha<T>(x.dim(0));
    if (tr) tr->alpha = out.alpha;
  } else {
    out.alpha = decision_gate(net, f, tr).alpha;
  }
  Tensor<T> ftv = fuse_views(views.micro, views.local, views.scout, out.alpha);
  Tensor<T> fr = global_coordination(net, ftv, tr);
  if (tr) tr->act["classifier.x"] = fr;
  Tensor<T> logits_small = conv2d_forward(fr, detail::conv_at(net, "classifier", 1, 0, 1));
  out.logits = bilinear_upsample(logits_small, 8);
  return out;
}

template <typename T>
struct ModelGrads {
  ParamStore<T> params;
  Tensor<T> dinput;
};

// End-to-end reverse pass. freeze_gate treats alpha as a constant (no
// gradient into the gate convs or through GAP back into F); with a
// fixed-gate trace the gate path is skipped unconditionally.
template <typename T>
ModelGrads<T> model_backward(const ATVNet<T>& net, const ForwardTrace<T>& trace,
                             const Tensor<T>& dlogits, bool freeze_gate = false) {
  detail::require(trace.mode == Mode::train, "model_backward: trace must come from train mode");
  ModelGrads<T> out;
  ParamStore<T>& grads = out.params;

  // classifier + upsample
  Tensor<T> dsmall = bilinear_upsample_backward(dlogits, 8);
  const Tensor<T>& fr = trace.act.at("classifier.x");
  Conv2DGrads<T> cg = conv2d_backward(fr, detail::conv_at(net, "classifier", 1, 0, 1), dsmall);
  grads.accumulate("classifier.weight", cg.dweight);
  grads.accumulate("classifier.bias", cg.dbias);
  Tensor<T> dfr = std::move(cg.dx);

  // coordination: F_r = F' * s
  const Tensor<T>& fprime = trace.act.at("coord.fprime");
  const Tensor<T>& s = trace.act.at("coord.s");
  const int64_t n = fprime.dim(0), c = fprime.dim(1), hw = fprime.dim(2) * fprime.dim(3);
  Tensor<T> dfprime(fprime.shape());
  Tensor<T> ds(s.shape());
  for (int64_t in = 0; in < n; ++in) {
    for (int64_t ic = 0; ic < c; ++ic) {
      const T sv = s.at(in, ic, 0, 0);
      const T* pf = fprime.data() + fprime.offset(in, ic, 0, 0);
      const T* pd = dfr.data() + dfr.offset(in, ic, 0, 0);
      T* pg = dfprime.data() + dfprime.offset(in, ic, 0, 0);
      T acc = T(0);
      for (int64_t i = 0; i < hw; ++i) {
        pg[i] = pd[i] * sv;
        acc += pd[i] * pf[i];
      }
      ds.at(in, ic, 0, 0) = acc;
    }
  }
  Tensor<T> ds2 = sigmoid_backward(trace.act.at("coord.s2pre"), ds);
  cg = conv2d_backward(trace.act.at("coord.s1"), detail::conv_at(net, "coord.se2", 1, 0, 1), ds2);
  grads.accumulate("coord.se2.weight", cg.dweight);
  grads.accumulate("coord.se2.bias", cg.dbias);
  Tensor<T> ds1 = relu_backward(trace.act.at("coord.s1pre"), cg.dx);
  cg = conv2d_backward(trace.act.at("coord.zc"), detail::conv_at(net, "coord.se1", 1, 0, 1), ds1);
  grads.accumulate("coord.se1.weight", cg.dweight);
  grads.accumulate("coord.se1.bias", cg.dbias);
  dfprime = add(dfprime, global_avg_pool_backward(cg.dx, fprime.dim(2), fprime.dim(3)));

  cg = conv2d_backward(trace.act.at("coord.c1"), detail::conv_at(net, "coord.conv2", 1, 1, 1), dfprime);
  grads.accumulate("coord.conv2.weight", cg.dweight);
  grads.accumulate("coord.conv2.bias", cg.dbias);
  Tensor<T> dc1 = relu_backward(trace.act.at("coord.c1pre"), cg.dx);
  cg = conv2d_backward(trace.act.at("coord.in"), detail::conv_at(net, "coord.conv1", 1, 1, 1), dc1);
  grads.accumulate("coord.conv1.weight", cg.dweight);
  grads.accumulate("coord.conv1.bias", cg.dbias);
  Tensor<T> dftv = std::move(cg.dx);

  // fusion
  const Tensor<T>& fm = trace.act.at("head.f_micro");
  const Tensor<T>& fl = trace.act.at("head.f_local");
  const Tensor<T>& fs = trace.act.at("head.f_scout");
  FuseGrads<T> fg = fuse_views_backward(fm, fl, fs, trace.alpha, dftv);

  // view branches
  const Tensor<T>& f = trace.act.at("head.f");
  Tensor<T> df(f.shape());
  cg = conv2d_backward(f, detail::conv_at(net, "view_micro", 1, 0, 1), fg.dmicro);
  grads.accumulate("view_micro.weight", cg.dweight);
  grads.accumulate("view_micro.bias", cg.dbias);
  df = add(df, cg.dx);
  cg = conv2d_backward(f, detail::conv_at(net, "view_local", 1, 1, 1), fg.dlocal);
  grads.accumulate("view_local.weight", cg.dweight);
  grads.accumulate("view_local.bias", cg.dbias);
  df = add(df, cg.dx);
  cg = conv2d_backward(f, detail::conv_at(net, "view_scout", 1, 2 * net.scout_dilation, net.scout_dilation), fg.dscout);
  grads.accumulate("view_scout.weight", cg.dweight);
  grads.accumulate("view_scout.bias", cg.dbias);
  df = add(df, cg.dx);

  // gate path
  if (!trace.fixed_gate && !freeze_gate) {
    Tensor<T> dglogits = softmax_channels_backward(trace.alpha, fg.dalpha);
    cg = conv2d_backward(trace.act.at("gate.h1"), detail::conv_at(net, "gate.conv2", 1, 0, 1), dglogits);
    grads.accumulate("gate.conv2.weight", cg.dweight);
    grads.accumulate("gate.conv2.bias", cg.dbias);
    Tensor<T> dh1 = relu_backward(trace.act.at("gate.h1pre"), cg.dx);
    cg = conv2d_backward(trace.act.at("gate.z"), detail::conv_at(net, "gate.conv1", 1, 0, 1), dh1);
    grads.accumulate("gate.conv1.weight", cg.dweight);
    grads.accumulate("gate.conv1.bias", cg.dbias);
    df = add(df, global_avg_pool_backward(cg.dx, f.dim(2), f.dim(3)));
  } else if (!trace.fixed_gate) {
    // alpha frozen: gate parameters still need (zero) gradient entries so
    // the optimizer sees a complete gradient map
    grads.accumulate("gate.conv1.weight", Tensor<T>(net.params.at("gate.conv1.weight").shape()));
    grads.accumulate("gate.conv1.bias", Tensor<T>(net.params.at("gate.conv1.bias").shape()));
    grads.accumulate("gate.conv2.weight", Tensor<T>(net.params.at("gate.conv2.weight").shape()));
    grads.accumulate("gate.conv2.bias", Tensor<T>(net.params.at("gate.conv2.bias").shape()));
  }

  // backbone
  out.dinput = backbone_backward(net, trace, df, grads);

  // fixed-gate runs never touch the gate parameters; emit zero gradients
  // so optimizer bookkeeping stays uniform
  if (trace.fixed_gate) {
    for (const char* name : {"gate.conv1.weight", "gate.conv1.bias", "gate.conv2.weight", "gate.conv2.bias"}) {
      if (!grads.has(name)) grads.accumulate(name, Tensor<T>(net.params.at(name).shape()));
    }
  }
  return out;
}

}  // namespace atv
