#include "raflow/pipeline.hpp"

#include <iostream>

namespace raflow {

ForwardResult forward(const RofeModel& model, const FramePair& pair, const ForwardOptions& opts) {
  ForwardResult out;
  out.coarse = estimate_flow(model, pair);
  const std::size_t n = pair.source.size();
  if (!opts.use_sfr) {
    out.final_flow = out.coarse;
    out.static_mask.assign(n, false);
    return out;
  }

  MaskThresholds th = opts.thresholds;
  if (!opts.override_zeta) th.zeta = model.hyperparams().zeta;
  const SceneFlow coarse = to_flow(out.coarse);
  try {
    MaskResult m = static_mask(pair, coarse, th);
    out.static_mask = std::move(m.mask);
    out.coarse_ego = m.coarse_ego;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::DegenerateConfiguration && e.code() != ErrorCode::TooFewPoints) throw;
    out.static_mask.assign(n, false);
  }

  RefineGraph g = refine(pair, out.coarse, out.static_mask);
  out.final_flow = g.final_flow;
  out.ego_motion = g.ego_motion;
  out.fallback = g.fallback;
  if (out.fallback && opts.warn_on_fallback) {
    std::cerr << "warning: static flow refinement fell back to the coarse flow\n";
  }
  return out;
}

Prediction infer(const RofeModel& model, const FramePair& pair, const ForwardOptions& opts) {
  const ForwardResult r = forward(model, pair, opts);
  Prediction p;
  p.flow = to_flow(r.final_flow);
  p.static_mask = r.static_mask;
  p.ego_motion = r.ego_motion;
  return p;
}

}  // namespace raflow
