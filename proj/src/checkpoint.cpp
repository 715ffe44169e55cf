#include <algorithm>

#include "binary_io.hpp"
#include "raflow/rofe.hpp"

namespace raflow {
namespace {

constexpr char kMagic[4] = {'R', '4', 'D', 'C'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

void save_checkpoint(const RofeModel& model, const std::string& path) {
  const HyperParams& hp = model.hyperparams();
  detail::BinaryWriter w;
  w.raw(kMagic, 4);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(hp.n_scales));
  w.u32(static_cast<std::uint32_t>(hp.c_local));
  w.u32(static_cast<std::uint32_t>(hp.c_cor));
  w.u32(static_cast<std::uint32_t>(hp.radii.size()));
  for (double r : hp.radii) w.f64(r);
  w.f64(hp.zeta);
  w.f64(hp.delta);
  w.f64(hp.epsilon);
  w.f64(hp.alpha);
  w.u32(static_cast<std::uint32_t>(hp.n_neighbors));
  w.u8(model.channels().rrv);
  w.u8(model.channels().rcs);
  w.u8(model.channels().power);

  const auto params = model.parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    w.u32(static_cast<std::uint32_t>(p.name.size()));
    w.bytes(p.name);
    w.u32(static_cast<std::uint32_t>(p.tensor.rank()));
    for (std::size_t d : p.tensor.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (double v : p.tensor.data()) w.f64(v);
  }
  w.write_file(path);
}

RofeModel load_checkpoint(const std::string& path) {
  detail::BinaryReader r(path);
  char magic[4];
  r.raw(magic, 4);
  if (!std::equal(magic, magic + 4, kMagic)) throw Error(ErrorCode::IoError, "'" + path + "' is not a checkpoint");
  if (const auto v = r.u32(); v != kVersion) {
    throw Error(ErrorCode::IoError, "unsupported checkpoint version " + std::to_string(v));
  }
  HyperParams hp;
  hp.n_scales = r.u32();
  hp.c_local = r.u32();
  hp.c_cor = r.u32();
  hp.radii.resize(r.u32());
  for (double& x : hp.radii) x = r.f64();
  hp.zeta = r.f64();
  hp.delta = r.f64();
  hp.epsilon = r.f64();
  hp.alpha = r.f64();
  hp.n_neighbors = r.u32();
  InputChannels channels;
  channels.rrv = r.u8() != 0;
  channels.rcs = r.u8() != 0;
  channels.power = r.u8() != 0;

  RofeModel model = RofeModel::create(hp, 0, channels);
  auto params = model.parameters();
  const std::uint32_t count = r.u32();
  if (count != params.size()) throw Error(ErrorCode::IoError, "checkpoint blob count mismatch");
  for (auto& p : params) {
    const std::string name = r.bytes(r.u32());
    if (name != p.name) throw Error(ErrorCode::IoError, "expected blob '" + p.name + "', found '" + name + "'");
    ad::Shape shape(r.u32());
    for (auto& d : shape) d = r.u32();
    if (shape != p.tensor.shape()) throw Error(ErrorCode::IoError, "shape mismatch for blob '" + name + "'");
    for (double& v : p.tensor.mutable_data()) v = r.f64();
  }
  if (!r.at_end()) throw Error(ErrorCode::IoError, "trailing bytes in checkpoint");
  return model;
}

}  // namespace raflow
