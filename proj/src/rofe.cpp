#include "raflow/rofe.hpp"

#include <algorithm>
#include <cmath>

#include "raflow/rng.hpp"

namespace raflow {
namespace {

using ad::Tensor;

// Fixed input normalization: keeps every raw channel near unit scale.
constexpr double kPositionScale = 1.0 / 20.0;
constexpr double kRrvScale = 1.0 / 10.0;
constexpr double kRcsScale = 1.0 / 20.0;
constexpr double kPowerScale = 1.0 / 50.0;
constexpr double kLeakySlope = 0.1;

std::size_t scale_samples(std::size_t scale) { return std::size_t{4} << scale; }

class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : seed_(seed) {}

  Tensor uniform(std::size_t rows, std::size_t cols, std::size_t fan_in, std::size_t fan_out) {
    CounterRng rng(seed_, stream_++);
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::vector<double> w(rows * cols);
    for (double& v : w) v = rng.uniform(-bound, bound);
    return Tensor::parameter({rows, cols}, std::move(w));
  }

  Tensor zeros(std::size_t rows, std::size_t cols) {
    ++stream_;
    return Tensor::parameter({rows, cols}, std::vector<double>(rows * cols, 0.0));
  }

  Linear linear(std::size_t in, std::size_t out) { return {uniform(in, out, in, out), zeros(1, out)}; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_ = 0;
};

SetConvLayer make_set_conv(Initializer& init, double radius, std::size_t samples, std::size_t in_width,
                           std::vector<std::size_t> widths) {
  SetConvLayer layer;
  layer.radius = radius;
  layer.sample_count = samples;
  layer.mlp_widths = widths;
  const std::size_t fan_in = in_width + 3;
  layer.w_feat = init.uniform(in_width, widths[0], fan_in, widths[0]);
  layer.w_disp = init.uniform(3, widths[0], fan_in, widths[0]);
  layer.b_first = init.zeros(1, widths[0]);
  for (std::size_t l = 1; l < widths.size(); ++l) layer.rest.push_back(init.linear(widths[l - 1], widths[l]));
  return layer;
}

Tensor broadcast_rows(const Tensor& row, std::size_t n) { return ad::gather(row, ad::Index(n, 0)); }

Tensor apply_linear(const Tensor& x, const Linear& l) { return ad::linear(x, l.weight, l.bias); }

/// Scales a (rows x 1) weight column across `width` channels.
Tensor broadcast_cols(const Tensor& col, std::size_t width) {
  return ad::matmul(col, Tensor::full({1, width}, 1.0));
}

/// Softmax-weighted sum over each query's k neighbors of a (n·k x c) block.
Tensor weighted_pool(const Tensor& values, const Tensor& scores, std::size_t n, std::size_t k) {
  const std::size_t c = values.dim(1);
  Tensor w = ad::softmax(ad::reshape(scores, {n, k}), 1);
  Tensor weighted = ad::mul(values, broadcast_cols(ad::reshape(w, {n * k, 1}), c));
  return ad::sum(ad::reshape(weighted, {n, k, c}), 1);
}

Tensor displacements(const Points3& ref, const Points3& centers, const NeighborTable& table, double scale) {
  std::vector<double> d(table.queries * table.k * 3);
  for (std::size_t i = 0; i < table.queries; ++i) {
    for (std::size_t s = 0; s < table.k; ++s) {
      const Eigen::RowVector3d v = (ref.row(table.at(i, s)) - centers.row(i)) * scale;
      std::copy(v.data(), v.data() + 3, d.begin() + (i * table.k + s) * 3);
    }
  }
  return Tensor::constant({table.queries * table.k, 3}, std::move(d));
}

Tensor set_conv(const SetConvLayer& layer, const Tensor& feats, const Points3& points, const NeighborTable& table) {
  const std::size_t n = table.queries, k = table.k;
  Tensor grouped = ad::gather(ad::matmul(feats, layer.w_feat), table.indices);
  Tensor disp = ad::linear(displacements(points, points, table, 1.0 / layer.radius), layer.w_disp, layer.b_first);
  Tensor h = ad::relu(ad::add(grouped, disp));
  for (const auto& l : layer.rest) h = ad::relu(apply_linear(h, l));
  return ad::max(ad::reshape(h, {n, k, h.dim(1)}), 1);
}

Tensor multi_scale(const std::vector<SetConvLayer>& layers, const Tensor& feats, const FrameNeighbors& nb) {
  std::vector<Tensor> scales;
  for (std::size_t s = 0; s < layers.size(); ++s) scales.push_back(set_conv(layers[s], feats, nb.points, nb.balls[s]));
  Tensor local = ad::concat(scales, 1);
  const std::size_t width = local.dim(1);
  Tensor global = ad::reshape(ad::max(local, 0), {1, width});
  return ad::concat({local, broadcast_rows(global, local.dim(0))}, 1);
}

void expect_shape(const Tensor& t, std::size_t rows, std::size_t cols, const std::string& what) {
  if (t.shape() != ad::Shape{rows, cols}) {
    throw Error(ErrorCode::ConfigInvalid, what + " has shape " + ad::shape_string(t.shape()) + ", expected (" +
                                               std::to_string(rows) + ", " + std::to_string(cols) + ")");
  }
}

void check_set_conv(const SetConvLayer& layer, std::size_t in_width, const std::vector<std::size_t>& widths,
                    double radius, std::size_t samples, const std::string& name) {
  if (layer.mlp_widths != widths || layer.radius != radius || layer.sample_count != samples) {
    throw Error(ErrorCode::ConfigInvalid, name + " does not match the architecture table");
  }
  expect_shape(layer.w_feat, in_width, widths[0], name + ".w_feat");
  expect_shape(layer.w_disp, 3, widths[0], name + ".w_disp");
  expect_shape(layer.b_first, 1, widths[0], name + ".b_first");
  if (layer.rest.size() + 1 != widths.size()) throw Error(ErrorCode::ConfigInvalid, name + " depth mismatch");
  for (std::size_t l = 0; l < layer.rest.size(); ++l) {
    expect_shape(layer.rest[l].weight, widths[l], widths[l + 1], name + ".weight");
    expect_shape(layer.rest[l].bias, 1, widths[l + 1], name + ".bias");
  }
}

std::vector<std::size_t> encoder_widths(const HyperParams& hp) { return {hp.c_local / 2, hp.c_local / 2, hp.c_local}; }
std::vector<std::size_t> decoder_widths(const HyperParams& hp) { return {hp.c_cor, hp.c_cor / 2, hp.c_local}; }
std::vector<std::size_t> output_widths(const HyperParams& hp) { return {hp.c_cor / 2, hp.c_cor / 4, hp.c_local, 3}; }
std::size_t embedding_width(const HyperParams& hp) {
  return hp.c_cor + 2 * hp.n_scales * hp.c_local + kInputChannels;
}

}  // namespace

RofeModel RofeModel::create(const HyperParams& hp, std::uint64_t seed, InputChannels channels) {
  validate_hyperparams(hp);
  RofeModel m;
  m.hp_ = hp;
  m.channels_ = channels;
  Initializer init(seed);

  for (std::size_t s = 0; s < hp.n_scales; ++s) {
    m.encoder.push_back(make_set_conv(init, hp.radii[s], scale_samples(s), kInputChannels, encoder_widths(hp)));
  }

  const std::size_t g = m.feature_width();
  const std::size_t c = hp.c_cor;
  m.cost.sample_count = 8;
  m.cost.mlp_widths = {c, c, c};
  const std::size_t fan_first = 2 * g + 3;
  m.cost.w_src = init.uniform(g, c, fan_first, c);
  m.cost.w_dst = init.uniform(g, c, fan_first, c);
  m.cost.w_disp = init.uniform(3, c, fan_first, c);
  m.cost.b_first = init.zeros(1, c);
  m.cost.second = init.linear(c, c);
  m.cost.score_point = init.linear(c, 1).weight;
  m.cost.w_patch_cost = init.uniform(c, c, c + 3, c);
  m.cost.w_patch_disp = init.uniform(3, c, c + 3, c);
  m.cost.b_patch = init.zeros(1, c);
  m.cost.score_patch = init.linear(c, 1).weight;

  for (std::size_t s = 0; s < hp.n_scales; ++s) {
    m.decoder.push_back(make_set_conv(init, hp.radii[s], scale_samples(s), embedding_width(hp), decoder_widths(hp)));
  }

  const auto widths = output_widths(hp);
  std::size_t in = m.feature_width();
  for (std::size_t l = 0; l < widths.size(); ++l) {
    if (l + 1 == widths.size()) {
      m.output.push_back({init.zeros(in, widths[l]), init.zeros(1, widths[l])});
    } else {
      m.output.push_back(init.linear(in, widths[l]));
    }
    in = widths[l];
  }
  check_architecture(m);
  return m;
}

void check_architecture(const RofeModel& model) {
  const HyperParams& hp = model.hyperparams();
  if (model.encoder.size() != hp.n_scales || model.decoder.size() != hp.n_scales) {
    throw Error(ErrorCode::ConfigInvalid, "scale count mismatch");
  }
  for (std::size_t s = 0; s < hp.n_scales; ++s) {
    check_set_conv(model.encoder[s], kInputChannels, encoder_widths(hp), hp.radii[s], scale_samples(s),
                   "encoder." + std::to_string(s));
    check_set_conv(model.decoder[s], embedding_width(hp), decoder_widths(hp), hp.radii[s], scale_samples(s),
                   "decoder." + std::to_string(s));
  }
  const std::size_t g = model.feature_width(), c = hp.c_cor;
  const CostVolumeLayer& cv = model.cost;
  if (cv.sample_count != 8 || cv.mlp_widths != std::vector<std::size_t>{c, c, c}) {
    throw Error(ErrorCode::ConfigInvalid, "cost volume does not match the architecture table");
  }
  expect_shape(cv.w_src, g, c, "cost.w_src");
  expect_shape(cv.w_dst, g, c, "cost.w_dst");
  expect_shape(cv.w_disp, 3, c, "cost.w_disp");
  expect_shape(cv.second.weight, c, c, "cost.second");
  expect_shape(cv.score_point, c, 1, "cost.score_point");
  expect_shape(cv.w_patch_cost, c, c, "cost.w_patch_cost");
  expect_shape(cv.w_patch_disp, 3, c, "cost.w_patch_disp");
  expect_shape(cv.score_patch, c, 1, "cost.score_patch");
  const auto widths = output_widths(hp);
  if (model.output.size() != widths.size()) throw Error(ErrorCode::ConfigInvalid, "output depth mismatch");
  std::size_t in = g;
  for (std::size_t l = 0; l < widths.size(); ++l) {
    expect_shape(model.output[l].weight, in, widths[l], "output." + std::to_string(l));
    in = widths[l];
  }
}

std::vector<NamedTensor> RofeModel::parameters() const {
  std::vector<NamedTensor> out;
  auto add_set_conv = [&](const std::string& prefix, const SetConvLayer& l) {
    out.push_back({prefix + ".w_feat", l.w_feat});
    out.push_back({prefix + ".w_disp", l.w_disp});
    out.push_back({prefix + ".b_first", l.b_first});
    for (std::size_t k = 0; k < l.rest.size(); ++k) {
      out.push_back({prefix + ".mlp" + std::to_string(k + 1) + ".weight", l.rest[k].weight});
      out.push_back({prefix + ".mlp" + std::to_string(k + 1) + ".bias", l.rest[k].bias});
    }
  };
  for (std::size_t s = 0; s < encoder.size(); ++s) add_set_conv("encoder." + std::to_string(s), encoder[s]);
  out.push_back({"cost.w_src", cost.w_src});
  out.push_back({"cost.w_dst", cost.w_dst});
  out.push_back({"cost.w_disp", cost.w_disp});
  out.push_back({"cost.b_first", cost.b_first});
  out.push_back({"cost.second.weight", cost.second.weight});
  out.push_back({"cost.second.bias", cost.second.bias});
  out.push_back({"cost.score_point.weight", cost.score_point});
  out.push_back({"cost.w_patch_cost", cost.w_patch_cost});
  out.push_back({"cost.w_patch_disp", cost.w_patch_disp});
  out.push_back({"cost.b_patch", cost.b_patch});
  out.push_back({"cost.score_patch.weight", cost.score_patch});
  for (std::size_t s = 0; s < decoder.size(); ++s) add_set_conv("decoder." + std::to_string(s), decoder[s]);
  for (std::size_t l = 0; l < output.size(); ++l) {
    out.push_back({"output." + std::to_string(l) + ".weight", output[l].weight});
    out.push_back({"output." + std::to_string(l) + ".bias", output[l].bias});
  }
  return out;
}

std::size_t RofeModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.size();
  return n;
}

void RofeModel::zero_grad() {
  for (auto& p : parameters()) p.tensor.zero_grad();
}

FrameNeighbors prepare_neighbors(const RadarFrame& frame, const HyperParams& hp) {
  FrameNeighbors nb;
  nb.points = positions(frame);
  const std::size_t n = frame.size();
  const std::size_t max_k = scale_samples(hp.n_scales - 1);
  // Sorted nearest lists serve every radius: a ball query is their prefix.
  const NeighborTable sorted = knn(nb.points, nb.points, std::min(max_k, n));
  for (std::size_t s = 0; s < hp.n_scales; ++s) {
    const std::size_t k = scale_samples(s);
    const double r2 = hp.radii[s] * hp.radii[s];
    NeighborTable table{n, k, {}};
    table.indices.reserve(n * k);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t found = 0;
      while (found < std::min(k, sorted.k) &&
             (nb.points.row(sorted.at(i, found)) - nb.points.row(i)).squaredNorm() <= r2) {
        ++found;
      }
      const std::size_t fill = found > 0 ? sorted.at(i, 0) : i;
      for (std::size_t slot = 0; slot < k; ++slot) table.indices.push_back(slot < found ? sorted.at(i, slot) : fill);
    }
    nb.balls.push_back(std::move(table));
  }
  return nb;
}

Tensor input_features(const RadarFrame& frame, const InputChannels& channels) {
  std::vector<double> v(frame.size() * kInputChannels);
  for (std::size_t i = 0; i < frame.size(); ++i) {
    const RadarPoint& p = frame.points[i];
    double* row = v.data() + i * kInputChannels;
    row[0] = p.position.x() * kPositionScale;
    row[1] = p.position.y() * kPositionScale;
    row[2] = p.position.z() * kPositionScale;
    row[3] = channels.rrv ? p.rrv * kRrvScale : 0.0;
    row[4] = channels.rcs ? p.rcs * kRcsScale : 0.0;
    row[5] = channels.power ? p.power * kPowerScale : 0.0;
  }
  return Tensor::constant({frame.size(), kInputChannels}, std::move(v));
}

Tensor encode(const RofeModel& model, const RadarFrame& frame) {
  return encode(model, frame, prepare_neighbors(frame, model.hyperparams()));
}

Tensor encode(const RofeModel& model, const RadarFrame& frame, const FrameNeighbors& nb) {
  return multi_scale(model.encoder, input_features(frame, model.channels()), nb);
}

Tensor cost_volume(const RofeModel& model, const RadarFrame& src_frame, const Tensor& src_feats,
                   const RadarFrame& dst_frame, const Tensor& dst_feats) {
  const CostVolumeLayer& cv = model.cost;
  const Points3 src = positions(src_frame);
  const Points3 dst = positions(dst_frame);
  const std::size_t n = src_frame.size();
  const double disp_scale = 1.0 / model.hyperparams().radii.front();

  // Point-to-patch: each source point against its nearest target points.
  const NeighborTable to_dst = knn(dst, src, cv.sample_count);
  const std::size_t kq = to_dst.k;
  ad::Index self_rows(n * kq);
  for (std::size_t i = 0; i < n * kq; ++i) self_rows[i] = i / kq;
  Tensor pre = ad::add(ad::gather(ad::matmul(src_feats, cv.w_src), self_rows),
                       ad::gather(ad::matmul(dst_feats, cv.w_dst), to_dst.indices));
  pre = ad::add(pre, ad::linear(displacements(dst, src, to_dst, disp_scale), cv.w_disp, cv.b_first));
  Tensor cost = ad::leaky_relu(pre, kLeakySlope);
  cost = ad::leaky_relu(apply_linear(cost, cv.second), kLeakySlope);
  Tensor point_cost = weighted_pool(cost, ad::matmul(cost, cv.score_point), n, kq);

  // Patch-to-patch: aggregate the point costs of nearby source points.
  const NeighborTable within = knn(src, src, cv.sample_count);
  const std::size_t kp = within.k;
  Tensor patch = ad::add(ad::gather(ad::matmul(point_cost, cv.w_patch_cost), within.indices),
                         ad::linear(displacements(src, src, within, disp_scale), cv.w_patch_disp, cv.b_patch));
  patch = ad::leaky_relu(patch, kLeakySlope);
  return weighted_pool(patch, ad::matmul(patch, cv.score_patch), n, kp);
}

Tensor decode(const RofeModel& model, const RadarFrame& src_frame, const Tensor& correlated, const Tensor& src_feats) {
  return decode(model, src_frame, prepare_neighbors(src_frame, model.hyperparams()), correlated, src_feats);
}

Tensor decode(const RofeModel& model, const RadarFrame& src_frame, const FrameNeighbors& nb, const Tensor& correlated,
              const Tensor& src_feats) {
  Tensor embedding = ad::concat({correlated, src_feats, input_features(src_frame, model.channels())}, 1);
  Tensor h = multi_scale(model.decoder, embedding, nb);
  for (std::size_t l = 0; l < model.output.size(); ++l) {
    h = apply_linear(h, model.output[l]);
    if (l + 1 < model.output.size()) h = ad::relu(h);
  }
  return h;
}

Tensor estimate_flow(const RofeModel& model, const FramePair& pair) {
  const FrameNeighbors src_nb = prepare_neighbors(pair.source, model.hyperparams());
  const FrameNeighbors dst_nb = prepare_neighbors(pair.target, model.hyperparams());
  Tensor g_p = encode(model, pair.source, src_nb);
  Tensor g_q = encode(model, pair.target, dst_nb);
  Tensor h = cost_volume(model, pair.source, g_p, pair.target, g_q);
  return decode(model, pair.source, src_nb, h, g_p);
}

SceneFlow to_flow(const Tensor& t) {
  if (t.rank() != 2 || t.dim(1) != 3) throw Error(ErrorCode::ShapeMismatch, "flow tensor must be N x 3");
  return Eigen::Map<const Points3>(t.data().data(), static_cast<Eigen::Index>(t.dim(0)), 3);
}

Tensor flow_tensor(const SceneFlow& flow, bool requires_grad) {
  std::vector<double> v(flow.data(), flow.data() + flow.size());
  const ad::Shape shape{static_cast<std::size_t>(flow.rows()), 3};
  return requires_grad ? Tensor::parameter(shape, std::move(v)) : Tensor::constant(shape, std::move(v));
}

}  // namespace raflow
