#include "vislex/encoder.hpp"

#include <algorithm>
#include <numeric>
#include <set>

namespace vislex {

void EncoderConfig::validate() const {
  if (image_size <= 0 || channels <= 0 || patch <= 0 || dim <= 0 || layers < 1 || heads < 1 ||
      mlp_ratio < 1 || num_classes < 2)
    throw ConfigError("encoder config: all dimensions must be positive and K >= 2");
  if (image_size % patch != 0) throw ConfigError("encoder config: image size not divisible by patch");
  if (dim % heads != 0) throw ConfigError("encoder config: dim not divisible by heads");
}

nlohmann::json EncoderConfig::to_json() const {
  return {{"image_size", image_size}, {"channels", channels}, {"patch", patch},
          {"dim", dim},               {"layers", layers},     {"heads", heads},
          {"mlp_ratio", mlp_ratio},   {"num_classes", num_classes}};
}

EncoderConfig EncoderConfig::from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.image_size = j.value("image_size", c.image_size);
  c.channels = j.value("channels", c.channels);
  c.patch = j.value("patch", c.patch);
  c.dim = j.value("dim", c.dim);
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
  c.num_classes = j.value("num_classes", c.num_classes);
  return c;
}

VisionEncoder::VisionEncoder(EncoderConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  const int patch_dim = cfg_.patch * cfg_.patch * cfg_.channels;
  const double out_gain = 1.0 / std::sqrt(2.0 * cfg_.layers);
  patch_embed_ = add_linear(params_, "patch_embed", patch_dim, cfg_.dim, rng);
  cls_ = params_.add("cls_token", random_normal(1, cfg_.dim, 0.1, rng));
  pos_ = params_.add("pos_embed", random_normal(cfg_.tokens(), cfg_.dim, 0.1, rng));
  for (int l = 0; l < cfg_.layers; ++l) {
    const std::string pre = "block" + std::to_string(l);
    Block b;
    b.ln1 = add_norm(params_, pre + ".ln1", cfg_.dim);
    b.attn = add_attention(params_, pre + ".attn", cfg_.dim, rng, out_gain);
    b.ln2 = add_norm(params_, pre + ".ln2", cfg_.dim);
    b.mlp = add_mlp(params_, pre + ".mlp", cfg_.dim, cfg_.dim * cfg_.mlp_ratio, rng, out_gain);
    blocks_.push_back(b);
  }
  ln_final_ = add_norm(params_, "ln_final", cfg_.dim);
  head_ = add_linear(params_, "head", cfg_.dim, cfg_.num_classes, rng);
}

void VisionEncoder::check_image(const ImageTensor& img) const {
  if (img.height() != cfg_.image_size || img.width() != cfg_.image_size ||
      img.channels() != cfg_.channels)
    throw ConfigError("image " + std::to_string(img.height()) + "x" + std::to_string(img.width()) +
                      "x" + std::to_string(img.channels()) + " does not match encoder input " +
                      std::to_string(cfg_.image_size) + "x" + std::to_string(cfg_.image_size) +
                      "x" + std::to_string(cfg_.channels));
}

VisionEncoder::Forward VisionEncoder::forward(Tape& t, const std::vector<Var>& p,
                                              std::span<const ImageTensor> images,
                                              bool track_last_block) const {
  const int B = static_cast<int>(images.size());
  const int P = cfg_.patches();
  const int T = cfg_.tokens();
  if (B == 0) throw ArgumentError("encoder forward on an empty batch");
  Mat patches(static_cast<Eigen::Index>(B) * P, cfg_.patch * cfg_.patch * cfg_.channels);
  for (int b = 0; b < B; ++b) {
    check_image(images[static_cast<size_t>(b)]);
    patches.middleRows(static_cast<Eigen::Index>(b) * P, P) =
        images[static_cast<size_t>(b)].patchify(cfg_.patch);
  }
  Var x = linear(t, p, patch_embed_, t.constant(std::move(patches)));
  x = prepend_row(t, x, p[cls_], B);
  x = add_tiled(t, x, p[pos_]);
  Forward f;
  for (size_t l = 0; l < blocks_.size(); ++l) {
    const Block& blk = blocks_[l];
    if (l + 1 == blocks_.size()) {
      if (track_last_block) x = t.track(x);
      f.last_block_input = x;
    }
    Var h = norm(t, p, blk.ln1, x);
    x = add(t, x, attend(t, p, blk.attn, h, h, B, T, T, cfg_.heads, false));
    x = add(t, x, mlp(t, p, blk.mlp, norm(t, p, blk.ln2, x)));
  }
  f.features = norm(t, p, ln_final_, x);
  f.logits = linear(t, p, head_, take_row(t, f.features, B, T, 0));
  return f;
}

FeatureEmbedding VisionEncoder::encode(const ImageTensor& image) const {
  return std::move(encode_batch(std::span<const ImageTensor>(&image, 1)).front());
}

std::vector<FeatureEmbedding> VisionEncoder::encode_batch(std::span<const ImageTensor> images) const {
  std::vector<FeatureEmbedding> out;
  out.reserve(images.size());
  const int T = cfg_.tokens();
  constexpr size_t kChunk = 64;
  for (size_t start = 0; start < images.size(); start += kChunk) {
    const auto chunk = images.subspan(start, std::min(kChunk, images.size() - start));
    Tape t;
    const auto p = params_.bind(t);
    const Mat& z = t.value(forward(t, p, chunk).features);
    require_finite(z, "encode");
    for (size_t b = 0; b < chunk.size(); ++b)
      out.push_back(FeatureEmbedding{z.middleRows(static_cast<Eigen::Index>(b) * T, T)});
  }
  return out;
}

ClassPrediction VisionEncoder::classify(const ImageTensor& image, int k) const {
  if (k < 1 || k > cfg_.num_classes)
    throw ArgumentError("classify: k=" + std::to_string(k) + " outside [1, " +
                        std::to_string(cfg_.num_classes) + "]");
  Tape t;
  const auto p = params_.bind(t);
  const Mat& logits = t.value(forward(t, p, std::span<const ImageTensor>(&image, 1)).logits);
  require_finite(logits, "classify");
  const Mat probs = softmax_rows(logits);
  ClassPrediction pred;
  pred.probabilities.assign(probs.data(), probs.data() + probs.size());
  std::vector<int> order(pred.probabilities.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return pred.probabilities[static_cast<size_t>(a)] > pred.probabilities[static_cast<size_t>(b)];
  });
  for (int i = 0; i < k; ++i)
    pred.top_k.emplace_back(order[static_cast<size_t>(i)],
                            pred.probabilities[static_cast<size_t>(order[static_cast<size_t>(i)])]);
  return pred;
}

std::vector<int> VisionEncoder::predict(std::span<const ImageTensor> images, int batch_size) const {
  std::vector<int> out;
  out.reserve(images.size());
  for (size_t start = 0; start < images.size(); start += static_cast<size_t>(batch_size)) {
    const auto chunk =
        images.subspan(start, std::min(static_cast<size_t>(batch_size), images.size() - start));
    Tape t;
    const auto p = params_.bind(t);
    const Mat& logits = t.value(forward(t, p, chunk).logits);
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      Eigen::Index arg = 0;
      logits.row(r).maxCoeff(&arg);
      out.push_back(static_cast<int>(arg));
    }
  }
  return out;
}

VisionEncoder VisionEncoder::thawed_copy() const {
  VisionEncoder copy(cfg_, 0);
  copy.params_.assign(params_.flatten());
  return copy;
}

ModelCheckpoint VisionEncoder::to_checkpoint() const {
  ModelCheckpoint c;
  c.kind = "encoder";
  c.config = cfg_.to_json();
  c.tensors = params_.all();
  for (auto& t : c.tensors) t.grad.resize(0, 0);
  c.digest = tensors_digest(c.tensors);
  c.frozen = frozen();
  return c;
}

VisionEncoder VisionEncoder::from_checkpoint(const ModelCheckpoint& ckpt) {
  if (ckpt.kind != "encoder") throw FormatError("expected an encoder checkpoint, got " + ckpt.kind);
  VisionEncoder enc(EncoderConfig::from_json(ckpt.config), 0);
  auto& ps = enc.params_.mutable_all();
  if (ckpt.tensors.size() != ps.size()) throw FormatError("encoder checkpoint tensor count mismatch");
  for (size_t i = 0; i < ps.size(); ++i) {
    if (ckpt.tensors[i].name != ps[i].name || ckpt.tensors[i].value.rows() != ps[i].value.rows() ||
        ckpt.tensors[i].value.cols() != ps[i].value.cols())
      throw FormatError("encoder checkpoint tensor '" + ckpt.tensors[i].name + "' does not match config");
    ps[i].value = ckpt.tensors[i].value;
  }
  if (ckpt.frozen) enc.freeze();
  return enc;
}

TrainCurve pretrain_classifier(VisionEncoder& model, std::span<const ImageTensor> images,
                               std::span<const int> labels, const ClassifierTrainConfig& cfg) {
  if (images.empty()) throw ArgumentError("pretrain_classifier: empty dataset");
  if (images.size() != labels.size()) throw ArgumentError("pretrain_classifier: label count mismatch");
  if (model.frozen()) throw ContractViolation("pretrain_classifier: model is frozen");
  std::set<int> distinct;
  for (int y : labels) {
    if (y < 0 || y >= model.config().num_classes)
      throw ArgumentError("pretrain_classifier: label " + std::to_string(y) + " outside [0, " +
                          std::to_string(model.config().num_classes) + ")");
    distinct.insert(y);
  }
  if (distinct.size() < 2)
    throw ArgumentError("pretrain_classifier: degenerate dataset, every one of the " +
                        std::to_string(labels.size()) + " samples has label " +
                        std::to_string(*distinct.begin()));
  return fit_classifier(model, images, labels, cfg);
}

TrainCurve fit_classifier(VisionEncoder& model, std::span<const ImageTensor> images,
                          std::span<const int> labels, const ClassifierTrainConfig& cfg) {
  if (images.size() != labels.size()) throw ArgumentError("fit_classifier: label count mismatch");
  if (model.frozen()) throw ContractViolation("fit_classifier: model is frozen");
  TrainCurve curve;
  if (images.empty()) return curve;
  Adam opt(cfg.lr);
  Rng rng(cfg.seed);
  std::vector<size_t> order(images.size());
  std::iota(order.begin(), order.end(), 0);
  const size_t bs = static_cast<size_t>(std::max(1, cfg.batch_size));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
    double total = 0.0;
    size_t batches = 0;
    for (size_t start = 0; start < order.size(); start += bs) {
      const size_t n = std::min(bs, order.size() - start);
      std::vector<ImageTensor> batch;
      std::vector<int> y;
      batch.reserve(n);
      for (size_t i = 0; i < n; ++i) {
        batch.push_back(images[order[start + i]]);
        y.push_back(labels[order[start + i]]);
      }
      Tape t;
      model.params().zero_grad();
      const auto p = model.params().bind(t, true);
      const auto f = model.forward(t, p, batch);
      Var loss = softmax_cross_entropy(t, f.logits, y);
      t.backward(loss);
      opt.step(model.params());
      const double l = t.value(loss)(0, 0);
      if (!std::isfinite(l)) throw NumericError("pretrain_classifier: loss diverged");
      curve.step_loss.push_back(l);
      total += l;
      ++batches;
    }
    curve.epoch_loss.push_back(total / static_cast<double>(batches));
  }
  model.params().zero_grad();
  return curve;
}

}  // namespace vislex
