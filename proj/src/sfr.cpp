#include "raflow/sfr.hpp"

#include <cmath>
#include <cstdio>

#include <Eigen/SVD>

#include "raflow/geometry.hpp"
#include "raflow/rofe.hpp"

namespace raflow {

double relative_residual(double radial_residual, double rrv_dt, const MaskThresholds& th) {
  if (std::abs(rrv_dt) < th.eta_v) return th.zeta * std::abs(radial_residual) / th.eta_abs;
  return std::abs(radial_residual / rrv_dt);
}

MaskResult static_mask(const FramePair& pair, const SceneFlow& coarse, const MaskThresholds& th) {
  const std::size_t n = pair.source.size();
  if (static_cast<std::size_t>(coarse.rows()) != n) {
    throw Error(ErrorCode::LengthMismatch, "coarse flow length differs from source size");
  }
  if (n < 3) throw Error(ErrorCode::TooFewPoints, "static mask needs at least 3 source points");

  const Points3 x = positions(pair.source);
  const Points3 warped = x + coarse;
  MaskResult out;
  out.coarse_ego = kabsch(x, warped);
  const SceneFlow rigid = transform_to_flow(out.coarse_ego, x);

  out.mask.resize(n);
  out.radial_residuals.resize(n);
  out.residuals.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Vector3d xi = x.row(i).transpose();
    const double radial_shift = rigid.row(i).dot(xi / xi.norm());
    const double rrv_dt = pair.source.points[i].rrv * pair.dt;
    out.radial_residuals[i] = radial_shift - rrv_dt;
    out.residuals[i] = relative_residual(out.radial_residuals[i], rrv_dt, th);
    out.mask[i] = is_static_residual(out.residuals[i], th.zeta);
  }
  return out;
}

MaskResult static_mask(const FramePair& pair, const SceneFlow& coarse, double zeta) {
  MaskThresholds th;
  th.zeta = zeta;
  return static_mask(pair, coarse, th);
}

RefineGraph refine(const FramePair& pair, const ad::Tensor& coarse, const StaticMask& mask) {
  const std::size_t n = pair.source.size();
  if (coarse.shape() != ad::Shape{n, 3} || mask.size() != n) {
    throw Error(ErrorCode::LengthMismatch, "refine inputs disagree with source size");
  }
  ad::Index stat;
  for (std::size_t i = 0; i < n; ++i) {
    if (mask[i]) stat.push_back(i);
  }
  RefineGraph out;
  if (stat.size() < 3) {
    out.final_flow = coarse;
    out.fallback = true;
    return out;
  }

  const Points3 x = positions(pair.source);
  Points3 src(stat.size(), 3);
  for (std::size_t k = 0; k < stat.size(); ++k) src.row(k) = x.row(stat[k]);
  const Eigen::RowVector3d src_mean = src.colwise().mean();
  const Points3 src_centered = src.rowwise() - src_mean;

  const double inv_n = 1.0 / static_cast<double>(stat.size());
  const ad::Tensor src_t = flow_tensor(src);
  const ad::Tensor dst = ad::add(src_t, ad::gather(coarse, stat));
  const ad::Tensor dst_mean = ad::reshape(ad::scale(ad::sum(dst, 0), inv_n), {1, 3});
  const ad::Tensor dst_centered = ad::sub(dst, ad::gather(dst_mean, ad::Index(stat.size(), 0)));
  const ad::Tensor cov = ad::matmul(ad::transpose(flow_tensor(src_centered)), dst_centered);

  {
    const Eigen::Matrix3d h = Eigen::Map<const Eigen::Matrix<double, 3, 3, Eigen::RowMajor>>(cov.data().data());
    const Eigen::Vector3d sigma = Eigen::JacobiSVD<Eigen::Matrix3d>(h).singularValues();
    if (!(sigma(0) > 0.0) || sigma(1) <= 1e-12 * sigma(0)) {
      out.final_flow = coarse;
      out.fallback = true;
      return out;
    }
  }

  const ad::Tensor rot = ad::kabsch_rotation(cov);
  const ad::Tensor src_mean_col = ad::Tensor::constant({3, 1}, {src_mean(0), src_mean(1), src_mean(2)});
  const ad::Tensor trans = ad::sub(dst_mean, ad::transpose(ad::matmul(rot, src_mean_col)));  // 1 x 3
  const ad::Tensor x_t = flow_tensor(x);
  const ad::Tensor rigid =
      ad::sub(ad::add(ad::matmul(x_t, ad::transpose(rot)), ad::gather(trans, ad::Index(n, 0))), x_t);

  // Row selection: i picks rigid row i when static, coarse row i otherwise.
  ad::Index select(n);
  for (std::size_t i = 0; i < n; ++i) select[i] = mask[i] ? i : n + i;
  out.final_flow = ad::gather(ad::concat({rigid, coarse}, 0), select);

  out.ego_motion.rotation = Eigen::Map<const Eigen::Matrix<double, 3, 3, Eigen::RowMajor>>(rot.data().data());
  out.ego_motion.translation = Eigen::Vector3d(trans.at(0), trans.at(1), trans.at(2));
  return out;
}

SfrOutput refine(const FramePair& pair, const SceneFlow& coarse, const StaticMask& mask) {
  const RefineGraph g = refine(pair, flow_tensor(coarse), mask);
  SfrOutput out;
  out.final_flow = to_flow(g.final_flow);
  out.static_mask = mask;
  out.ego_motion = g.ego_motion;
  out.fallback = g.fallback;
  return out;
}

SfrOutput static_flow_refinement(const FramePair& pair, const SceneFlow& coarse, const MaskThresholds& th) {
  MaskResult m = static_mask(pair, coarse, th);
  SfrOutput out = refine(pair, coarse, m.mask);
  out.coarse_ego = m.coarse_ego;
  out.residuals = std::move(m.residuals);
  return out;
}

MotionSplit motion_segmentation(const StaticMask& mask) {
  MotionSplit split;
  for (std::size_t i = 0; i < mask.size(); ++i) (mask[i] ? split.stationary : split.moving).push_back(i);
  return split;
}

std::vector<bool> moving_flags(const StaticMask& mask) {
  std::vector<bool> out(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) out[i] = !mask[i];
  return out;
}

}  // namespace raflow
