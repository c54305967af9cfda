#pragma once

// Cascaded term/polarity tagger.
//
// A post-LN transformer encoder produces one hidden state per layer. The top
// layer feeds the term head. The output of the shared layer feeds a decoder
// whose query stream embeds the term labels of each position; its blocks run
// unmasked self-attention over the query stream, cross-attention onto the
// shared encoder states and a feed-forward sub-layer. The decoder output feeds
// the polarity head. Sequences of a batch are packed row-wise and attention
// never crosses a sequence boundary.

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "grace/ops.hpp"
#include "grace/spans.hpp"
#include "grace/tags.hpp"

namespace grace {

struct EncoderConfig {
  int layers = 4;          // total encoder layers
  int shared_layers = 3;   // the polarity branch reads the output of this layer (1-based)
  int hidden = 64;
  int heads = 4;
  int ffn = 256;
  int vocab_size = 0;
  int max_len = 128;
  int asc_layers = 2;      // 0 selects a direct linear polarity head on the shared layer
  double dropout = 0.1;

  void validate() const {
    if (layers < 1) throw ConfigError("model.layers must be at least 1");
    if (shared_layers < 1 || shared_layers > layers) throw ConfigError("model.shared_layers must lie in [1, layers]");
    if (hidden < 1 || heads < 1 || hidden % heads != 0) throw ConfigError("model.hidden must be divisible by model.heads");
    if (ffn < 1) throw ConfigError("model.ffn must be positive");
    if (vocab_size < 5) throw ConfigError("model.vocab_size must cover the special tokens");
    if (max_len < 3) throw ConfigError("model.max_len must be at least 3");
    if (asc_layers < 0) throw ConfigError("model.asc_layers must be non-negative");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model.dropout must lie in [0, 1)");
  }

  bool operator==(const EncoderConfig&) const = default;
};

/// Named parameter tensors in registration order.
template <typename Scalar>
class ModelParams {
 public:
  struct Entry {
    std::string name;
    Var<Scalar> var;
  };

  ModelParams() = default;
  ModelParams(ModelParams&&) noexcept = default;
  ModelParams& operator=(ModelParams&&) noexcept = default;

  // Copies own fresh parameter nodes; they never alias the source.
  ModelParams(const ModelParams& other) : index_(other.index_) {
    entries_.reserve(other.entries_.size());
    for (const auto& e : other.entries_) entries_.push_back({e.name, Var<Scalar>::parameter(e.var.value())});
  }
  ModelParams& operator=(const ModelParams& other) {
    if (this != &other) *this = ModelParams(other);
    return *this;
  }

  Var<Scalar>& add(const std::string& name, Mat<Scalar> value) {
    if (index_.count(name) != 0) throw ConfigError("duplicate parameter name " + name);
    index_.emplace(name, entries_.size());
    entries_.push_back({name, Var<Scalar>::parameter(std::move(value))});
    return entries_.back().var;
  }

  bool contains(std::string_view name) const { return index_.count(std::string(name)) != 0; }

  const Var<Scalar>& at(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw ConfigError("unknown parameter " + std::string(name));
    return entries_[it->second].var;
  }
  Var<Scalar>& at(std::string_view name) {
    return const_cast<Var<Scalar>&>(static_cast<const ModelParams&>(*this).at(name));
  }

  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += static_cast<std::size_t>(e.var.size());
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.var.zero_grad();
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Sequences packed row-wise.
struct PackedBatch {
  std::vector<int> ids;
  std::vector<int> positions;
  std::vector<Segment> segments;

  Index rows() const noexcept { return static_cast<Index>(ids.size()); }

  static PackedBatch pack(std::span<const std::vector<int>> sequences) {
    PackedBatch b;
    for (const auto& seq : sequences) {
      b.segments.push_back({static_cast<Index>(b.ids.size()), static_cast<Index>(seq.size())});
      for (std::size_t i = 0; i < seq.size(); ++i) {
        b.ids.push_back(seq[i]);
        b.positions.push_back(static_cast<int>(i));
      }
    }
    return b;
  }
};

/// Per-layer attention probabilities, one matrix per (segment, head).
template <typename Scalar>
struct AttentionTrace {
  std::vector<std::vector<Mat<Scalar>>> encoder_self;
  std::vector<std::vector<Mat<Scalar>>> decoder_self;
  std::vector<std::vector<Mat<Scalar>>> decoder_cross;
};

template <typename Scalar>
struct ForwardOptions {
  bool training = false;          // enables dropout
  std::mt19937_64* rng = nullptr;  // dropout source, required when training with dropout
  AttentionTrace<Scalar>* trace = nullptr;
};

template <typename Scalar>
struct BranchOutput {
  Var<Scalar> states;  // H_e for the term branch, G_c for the polarity branch
  Var<Scalar> logits;
  Var<Scalar> probs;
};

template <typename Scalar>
class GraceModel {
 public:
  GraceModel(EncoderConfig config, std::uint64_t seed) : config_(config) {
    config_.validate();
    std::mt19937_64 rng(seed);
    build(rng);
  }

  /// Wraps existing tensors; every expected parameter must be present with the right shape.
  GraceModel(EncoderConfig config, const std::vector<std::pair<std::string, Mat<Scalar>>>& tensors)
      : config_(config) {
    config_.validate();
    std::mt19937_64 rng(0);
    build(rng);
    std::unordered_map<std::string, const Mat<Scalar>*> by_name;
    for (const auto& [name, value] : tensors) by_name[name] = &value;
    if (by_name.size() != params_.size()) {
      throw ShapeError("model tensors: expected " + std::to_string(params_.size()) + " tensors, got " +
                       std::to_string(by_name.size()));
    }
    for (const auto& e : params_.entries()) {
      auto it = by_name.find(e.name);
      if (it == by_name.end()) throw ShapeError("model tensors: missing " + e.name);
      if (it->second->rows() != e.var.rows() || it->second->cols() != e.var.cols()) {
        throw ShapeError("model tensors: shape mismatch for " + e.name);
      }
      params_.at(e.name).mutable_value() = *it->second;
    }
  }

  const EncoderConfig& config() const noexcept { return config_; }
  ModelParams<Scalar>& params() noexcept { return params_; }
  const ModelParams<Scalar>& params() const noexcept { return params_; }

  /// Token embedding rows E for the batch.
  Var<Scalar> token_embeddings(const PackedBatch& batch) const {
    check_batch(batch);
    return gather_rows(params_.at("embed.token"), std::span<const int>(batch.ids));
  }

  /// All encoder layer outputs H^1..H^L. A perturbation, when given, is added
  /// to the token embeddings before position embeddings and the first layer.
  std::vector<Var<Scalar>> encode(const PackedBatch& batch, const Var<Scalar>* perturbation = nullptr,
                                  const ForwardOptions<Scalar>& opt = {}) const {
    Var<Scalar> e = token_embeddings(batch);
    if (perturbation != nullptr) {
      if (perturbation->rows() != e.rows() || perturbation->cols() != e.cols()) {
        throw ShapeError("encode: perturbation shape must match the token embeddings");
      }
      e = e + *perturbation;
    }
    Var<Scalar> x = e + gather_rows(params_.at("embed.position"), std::span<const int>(batch.positions));
    x = layer_norm(x, params_.at("embed.norm.gain"), params_.at("embed.norm.bias"));
    x = drop(x, opt);

    std::vector<Var<Scalar>> layers;
    layers.reserve(static_cast<std::size_t>(config_.layers));
    std::span<const Segment> segs(batch.segments);
    for (int i = 0; i < config_.layers; ++i) {
      const std::string p = "encoder." + std::to_string(i);
      auto* maps = trace_slot(opt.trace ? &opt.trace->encoder_self : nullptr);
      x = self_block(x, p, segs, opt, maps);
      x = ffn_block(x, p, opt);
      layers.push_back(x);
    }
    return layers;
  }

  BranchOutput<Scalar> ate_branch(const std::vector<Var<Scalar>>& layers) const {
    if (static_cast<int>(layers.size()) != config_.layers) throw ShapeError("ate_branch: wrong layer count");
    BranchOutput<Scalar> out;
    out.states = layers.back();
    out.logits = linear(out.states, params_.at("head.term.weight"), params_.at("head.term.bias"));
    out.probs = softmax(out.logits, 1);
    return out;
  }

  /// Polarity branch with the term-label query stream `q_labels` (one id in
  /// B/I/O per packed row, specials labelled O). With `consistent_spans` the
  /// scores come from span max-pooling followed by the consistent head.
  BranchOutput<Scalar> asc_branch(const std::vector<Var<Scalar>>& layers, const PackedBatch& batch,
                                  std::span<const int> q_labels, const ForwardOptions<Scalar>& opt = {},
                                  const std::vector<RowSpan>* consistent_spans = nullptr) const {
    if (static_cast<int>(layers.size()) != config_.layers) throw ShapeError("asc_branch: wrong layer count");
    const Var<Scalar>& memory = layers[static_cast<std::size_t>(config_.shared_layers - 1)];
    if (static_cast<Index>(q_labels.size()) != memory.rows()) throw ShapeError("asc_branch: label/length mismatch");
    for (int q : q_labels) {
      if (q < 0 || q >= kNumTermTags) throw ShapeError("asc_branch: query label outside B/I/O");
    }

    Var<Scalar> y = memory;
    if (config_.asc_layers > 0) {
      y = gather_rows(params_.at("decoder.label"), q_labels) +
          gather_rows(params_.at("decoder.position"), std::span<const int>(batch.positions));
      y = layer_norm(y, params_.at("decoder.norm.gain"), params_.at("decoder.norm.bias"));
      y = drop(y, opt);
      std::span<const Segment> segs(batch.segments);
      for (int k = 0; k < config_.asc_layers; ++k) {
        const std::string p = "decoder." + std::to_string(k);
        y = self_block(y, p, segs, opt, trace_slot(opt.trace ? &opt.trace->decoder_self : nullptr));
        y = cross_block(y, memory, p, segs, opt, trace_slot(opt.trace ? &opt.trace->decoder_cross : nullptr));
        y = ffn_block(y, p, opt);
      }
    }
    BranchOutput<Scalar> out;
    out.states = y;
    if (consistent_spans != nullptr) {
      out.logits = consistent_polarity_scores(y, *consistent_spans);
    } else {
      out.logits = linear(y, params_.at("head.polarity.weight"), params_.at("head.polarity.bias"));
    }
    out.probs = softmax(out.logits, 1);
    return out;
  }

  Var<Scalar> consistent_polarity_scores(const Var<Scalar>& states, const std::vector<RowSpan>& spans) const {
    return consistent_polarity(states, spans, params_.at("head.consistent.weight"), params_.at("head.consistent.bias"));
  }

  /// Polarity-branch parameters: decoder, label embeddings and polarity heads.
  static bool is_asc_parameter(std::string_view name) {
    return name.starts_with("decoder.") || name.starts_with("head.polarity.") ||
           name.starts_with("head.consistent.");
  }

  std::vector<Var<Scalar>> asc_parameters() const { return select(true); }
  std::vector<Var<Scalar>> ate_parameters() const { return select(false); }

  /// Encoder-layer parameters for layer `i` (0-based).
  std::vector<Var<Scalar>> encoder_layer_parameters(int i) const {
    const std::string prefix = "encoder." + std::to_string(i) + ".";
    std::vector<Var<Scalar>> out;
    for (const auto& e : params_.entries()) {
      if (e.name.starts_with(prefix)) out.push_back(e.var);
    }
    return out;
  }

  /// Copies self-attention and feed-forward sub-layers of the top asc_layers
  /// encoder layers into the decoder blocks (block k from encoder layer
  /// L - asc_layers + k, 0-based), zeroes the query position table and redraws
  /// cross-attention and label embeddings from N(0, 0.02^2). Zero query
  /// positions give every B query the same content-only probe.
  void init_asc_from_ate(std::uint64_t seed) {
    if (config_.asc_layers > config_.layers) {
      throw ShapeError("init_asc_from_ate: decoder deeper than the encoder");
    }
    static constexpr const char* kCopied[] = {
        "self.qkv.weight", "self.qkv.bias", "self.output.weight", "self.output.bias", "self_norm.gain",
        "self_norm.bias",  "ffn.in.weight", "ffn.in.bias",        "ffn.out.weight",   "ffn.out.bias",
        "ffn_norm.gain",   "ffn_norm.bias",
    };
    for (int k = 0; k < config_.asc_layers; ++k) {
      const int src = config_.layers - config_.asc_layers + k;
      for (const char* suffix : kCopied) {
        const std::string dst_name = "decoder." + std::to_string(k) + "." + suffix;
        const std::string src_name = "encoder." + std::to_string(src) + "." + suffix;
        const auto& from = params_.at(src_name).value();
        auto& to = params_.at(dst_name).mutable_value();
        if (from.rows() != to.rows() || from.cols() != to.cols()) {
          throw ShapeError("init_asc_from_ate: shape mismatch between " + src_name + " and " + dst_name);
        }
        to = from;
      }
    }
    if (config_.asc_layers == 0) return;
    std::mt19937_64 rng(seed);
    redraw(rng, "decoder.label");
    params_.at("decoder.position").mutable_value().setZero();
    for (int k = 0; k < config_.asc_layers; ++k) {
      const std::string p = "decoder." + std::to_string(k) + ".cross.";
      redraw(rng, p + "query.weight");
      params_.at(p + "query.bias").mutable_value().setZero();
      redraw(rng, p + "kv.weight");
      params_.at(p + "kv.bias").mutable_value().setZero();
      redraw(rng, p + "output.weight");
      params_.at(p + "output.bias").mutable_value().setZero();
    }
  }

  /// Same model in another scalar type.
  template <typename Other>
  GraceModel<Other> cast() const {
    std::vector<std::pair<std::string, Mat<Other>>> tensors;
    for (const auto& e : params_.entries()) tensors.emplace_back(e.name, e.var.value().template cast<Other>());
    return GraceModel<Other>(config_, tensors);
  }

 private:
  void build(std::mt19937_64& rng) {
    const Index h = config_.hidden;
    add_normal(rng, "embed.token", config_.vocab_size, h);
    add_normal(rng, "embed.position", config_.max_len, h);
    add_norm("embed.norm", h);
    for (int i = 0; i < config_.layers; ++i) {
      const std::string p = "encoder." + std::to_string(i) + ".";
      add_attention(rng, p + "self.", true);
      add_norm(p + "self_norm", h);
      add_ffn(rng, p);
      add_norm(p + "ffn_norm", h);
    }
    if (config_.asc_layers > 0) {
      add_normal(rng, "decoder.label", kNumTermTags, h);
      add_normal(rng, "decoder.position", config_.max_len, h);
      add_norm("decoder.norm", h);
    }
    for (int k = 0; k < config_.asc_layers; ++k) {
      const std::string p = "decoder." + std::to_string(k) + ".";
      add_attention(rng, p + "self.", true);
      add_norm(p + "self_norm", h);
      add_attention(rng, p + "cross.", false);
      add_norm(p + "cross_norm", h);
      add_ffn(rng, p);
      add_norm(p + "ffn_norm", h);
    }
    add_normal(rng, "head.term.weight", h, kNumTermTags);
    add_zero("head.term.bias", 1, kNumTermTags);
    add_normal(rng, "head.polarity.weight", h, kNumPolarityTags);
    add_zero("head.polarity.bias", 1, kNumPolarityTags);
    add_normal(rng, "head.consistent.weight", h, kNumPolarityTags);
    add_zero("head.consistent.bias", 1, kNumPolarityTags);
  }

  static Mat<Scalar> normal(std::mt19937_64& rng, Index r, Index c) {
    std::normal_distribution<double> dist(0.0, 0.02);
    Mat<Scalar> m(r, c);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(dist(rng));
    return m;
  }

  void add_normal(std::mt19937_64& rng, const std::string& name, Index r, Index c) {
    params_.add(name, normal(rng, r, c));
  }
  void add_zero(const std::string& name, Index r, Index c) { params_.add(name, Mat<Scalar>::Zero(r, c)); }
  void add_norm(const std::string& prefix, Index h) {
    params_.add(prefix + ".gain", Mat<Scalar>::Ones(1, h));
    params_.add(prefix + ".bias", Mat<Scalar>::Zero(1, h));
  }
  void add_attention(std::mt19937_64& rng, const std::string& p, bool self) {
    const Index h = config_.hidden;
    if (self) {
      add_normal(rng, p + "qkv.weight", h, 3 * h);
      add_zero(p + "qkv.bias", 1, 3 * h);
    } else {
      add_normal(rng, p + "query.weight", h, h);
      add_zero(p + "query.bias", 1, h);
      add_normal(rng, p + "kv.weight", h, 2 * h);
      add_zero(p + "kv.bias", 1, 2 * h);
    }
    add_normal(rng, p + "output.weight", h, h);
    add_zero(p + "output.bias", 1, h);
  }
  void add_ffn(std::mt19937_64& rng, const std::string& p) {
    add_normal(rng, p + "ffn.in.weight", config_.hidden, config_.ffn);
    add_zero(p + "ffn.in.bias", 1, config_.ffn);
    add_normal(rng, p + "ffn.out.weight", config_.ffn, config_.hidden);
    add_zero(p + "ffn.out.bias", 1, config_.hidden);
  }

  void redraw(std::mt19937_64& rng, const std::string& name) {
    auto& v = params_.at(name).mutable_value();
    v = normal(rng, v.rows(), v.cols());
  }

  void check_batch(const PackedBatch& batch) const {
    if (batch.positions.size() != batch.ids.size()) throw ShapeError("batch: ids/positions length mismatch");
    for (const auto& s : batch.segments) {
      if (s.length > config_.max_len) {
        throw ShapeError("batch: sequence of length " + std::to_string(s.length) + " exceeds max_len " +
                         std::to_string(config_.max_len));
      }
    }
    for (int id : batch.ids) {
      if (id < 0 || id >= config_.vocab_size) throw ShapeError("batch: unknown token id " + std::to_string(id));
    }
  }

  Var<Scalar> drop(const Var<Scalar>& x, const ForwardOptions<Scalar>& opt) const {
    if (!opt.training || config_.dropout <= 0.0) return x;
    if (opt.rng == nullptr) throw ConfigError("training forward with dropout needs an rng");
    return dropout(x, static_cast<Scalar>(config_.dropout), *opt.rng);
  }

  static std::vector<Mat<Scalar>>* trace_slot(std::vector<std::vector<Mat<Scalar>>>* layers) {
    if (layers == nullptr) return nullptr;
    layers->emplace_back();
    return &layers->back();
  }

  Var<Scalar> self_block(const Var<Scalar>& x, const std::string& layer, std::span<const Segment> segs,
                         const ForwardOptions<Scalar>& opt, std::vector<Mat<Scalar>>* maps) const {
    const Index h = config_.hidden;
    const std::string p = layer + ".self.";
    Var<Scalar> qkv = linear(x, params_.at(p + "qkv.weight"), params_.at(p + "qkv.bias"));
    Var<Scalar> a = attention(slice_cols(qkv, 0, h), slice_cols(qkv, h, h), slice_cols(qkv, 2 * h, h),
                              config_.heads, segs, segs, maps);
    a = drop(linear(a, params_.at(p + "output.weight"), params_.at(p + "output.bias")), opt);
    return layer_norm(x + a, params_.at(layer + ".self_norm.gain"), params_.at(layer + ".self_norm.bias"));
  }

  Var<Scalar> cross_block(const Var<Scalar>& y, const Var<Scalar>& memory, const std::string& layer,
                          std::span<const Segment> segs, const ForwardOptions<Scalar>& opt,
                          std::vector<Mat<Scalar>>* maps) const {
    const Index h = config_.hidden;
    const std::string p = layer + ".cross.";
    Var<Scalar> q = linear(y, params_.at(p + "query.weight"), params_.at(p + "query.bias"));
    Var<Scalar> kv = linear(memory, params_.at(p + "kv.weight"), params_.at(p + "kv.bias"));
    Var<Scalar> a = attention(q, slice_cols(kv, 0, h), slice_cols(kv, h, h), config_.heads, segs, segs, maps);
    a = drop(linear(a, params_.at(p + "output.weight"), params_.at(p + "output.bias")), opt);
    return layer_norm(y + a, params_.at(layer + ".cross_norm.gain"), params_.at(layer + ".cross_norm.bias"));
  }

  Var<Scalar> ffn_block(const Var<Scalar>& x, const std::string& layer, const ForwardOptions<Scalar>& opt) const {
    const std::string p = layer + ".ffn.";
    Var<Scalar> f = gelu(linear(x, params_.at(p + "in.weight"), params_.at(p + "in.bias")));
    f = drop(linear(f, params_.at(p + "out.weight"), params_.at(p + "out.bias")), opt);
    return layer_norm(x + f, params_.at(layer + ".ffn_norm.gain"), params_.at(layer + ".ffn_norm.bias"));
  }

  std::vector<Var<Scalar>> select(bool asc) const {
    std::vector<Var<Scalar>> out;
    for (const auto& e : params_.entries()) {
      if (is_asc_parameter(e.name) == asc) out.push_back(e.var);
    }
    return out;
  }

  EncoderConfig config_;
  ModelParams<Scalar> params_;
};

}  // namespace grace
