#include "bcnn/serialize.hpp"

#include <fstream>
#include <iterator>
#include <sstream>

namespace bcnn {

namespace {

constexpr char kMagic[4] = {'B', 'C', 'N', '1'};

}  // namespace

std::vector<std::uint8_t> serialize_model(const ModelGraph& model) {
  ByteWriter topo;
  topo.u32(static_cast<std::uint32_t>(model.name().size()));
  topo.bytes({reinterpret_cast<const std::uint8_t*>(model.name().data()), model.name().size()});
  const Shape in = model.input_shape();
  topo.u32(static_cast<std::uint32_t>(in.c));
  topo.u32(static_cast<std::uint32_t>(in.h));
  topo.u32(static_cast<std::uint32_t>(in.w));
  topo.u32(static_cast<std::uint32_t>(model.layers().size()));
  for (const auto& l : model.layers()) l->write_topology(topo);

  ByteWriter out;
  out.bytes({reinterpret_cast<const std::uint8_t*>(kMagic), 4});
  out.u32(kModelFileVersion);
  out.u32(static_cast<std::uint32_t>(topo.buffer().size()));
  out.bytes(topo.buffer());
  for (const auto& l : model.layers()) l->write_payload(out);
  return std::move(out.buffer());
}

ModelGraph deserialize_model(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  const auto magic = r.take(4);
  if (!std::equal(magic.begin(), magic.end(), kMagic)) throw Error(ErrorCode::BadMagic, "not a BCN1 model file");
  const std::uint32_t version = r.u32();
  if (version != kModelFileVersion)
    throw Error(ErrorCode::UnsupportedVersion, "model file version " + std::to_string(version));

  ByteReader topo(r.take(r.u32()));
  const auto name_bytes = topo.take(topo.u32());
  std::string name(name_bytes.begin(), name_bytes.end());
  Shape in;
  in.c = topo.u32();
  in.h = topo.u32();
  in.w = topo.u32();
  std::vector<LayerPtr> layers;
  for (std::uint32_t i = 0, n = topo.u32(); i < n; ++i) layers.push_back(read_layer_topology(topo));
  if (topo.remaining() != 0) throw Error(ErrorCode::CorruptRecord, "trailing bytes in topology descriptor");

  for (auto& l : layers) l->read_payload(r);
  if (r.remaining() != 0)
    throw Error(ErrorCode::CorruptRecord, std::to_string(r.remaining()) + " trailing bytes after payloads");
  ModelGraph m(std::move(name), in, std::move(layers));
  m.validate();
  return m;
}

void save_model(const ModelGraph& model, const std::filesystem::path& path) {
  const auto bytes = serialize_model(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::MissingFile, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::MissingFile, "write failed for " + path.string());
}

ModelGraph load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingFile, "cannot open model file " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_model(bytes);
}

namespace {

void list(std::ostringstream& os, const std::vector<LayerPtr>& seq, Shape& shape, int depth) {
  for (const auto& l : seq) {
    const Shape out = l->out_shape(shape);
    os << std::string(2 * depth, ' ') << l->describe() << "  " << to_string(shape) << " -> " << to_string(out)
       << '\n';
    if (const auto* r = dynamic_cast<const ResidualBlockNode*>(l.get())) {
      Shape s = shape;
      os << std::string(2 * depth + 2, ' ') << "main:\n";
      list(os, r->main_path(), s, depth + 2);
      if (!r->shortcut_path().empty()) {
        s = shape;
        os << std::string(2 * depth + 2, ' ') << "shortcut:\n";
        list(os, r->shortcut_path(), s, depth + 2);
      }
    }
    shape = out;
  }
}

}  // namespace

std::string export_text(const ModelGraph& model) {
  std::ostringstream os;
  ModelGraph copy = model;
  std::size_t params = 0, binary = 0, active = 0, channels = 0;
  for (const auto& p : copy.params()) (p.binarized ? binary : params) += p.value.size();
  for (auto* b : copy.binary_convs()) {
    active += b->active_count();
    channels += b->geometry().out_channels;
  }
  os << "model " << model.name() << '\n';
  Shape s = model.input_shape();
  list(os, model.layers(), s, 1);
  os << "full-precision parameters " << params << '\n';
  os << "binarized weights " << binary << " (" << (binary + 7) / 8 << " bytes packed)\n";
  os << "binarized output channels active " << active << '/' << channels << '\n';
  os << "file bytes " << serialize_model(model).size() << '\n';
  return os.str();
}

}  // namespace bcnn
