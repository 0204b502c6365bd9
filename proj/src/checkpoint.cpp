#include "ifsl/checkpoint.hpp"

#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "binary_io.hpp"

namespace ifsl {

using nlohmann::json;

namespace {
constexpr std::uint32_t kVersion = 1;

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}
}  // namespace

std::string encode_store(const ParameterStore& store, const json& metadata) {
  std::string out = "MCKP";
  detail::put_u32(out, kVersion);
  detail::put_u32(out, std::uint32_t(store.count()));
  for (std::size_t i = 0; i < store.count(); ++i) {
    const std::string& name = store.name(i);
    if (name.size() > std::numeric_limits<std::uint16_t>::max()) throw std::invalid_argument("parameter name too long");
    detail::put_u16(out, std::uint16_t(name.size()));
    out += name;
    const Tensor& t = store.at(i);
    detail::put_u8(out, std::uint8_t(t.rank()));
    for (std::size_t d : t.shape()) detail::put_u32(out, std::uint32_t(d));
    for (double v : t.data()) {
      const float f = float(v);
      if (double(f) != v) {
        throw std::invalid_argument("checkpoint: parameter " + name + " is not float32-representable");
      }
      detail::put_f32(out, f);
    }
  }
  const std::string trailer = metadata.dump();
  detail::put_u32(out, std::uint32_t(trailer.size()));
  out += trailer;
  return out;
}

ParameterStore decode_store(std::string_view bytes, json* metadata) {
  detail::Reader r(bytes, "checkpoint");
  if (r.take(4) != "MCKP") throw std::runtime_error("checkpoint: bad magic");
  if (const auto v = r.u32(); v != kVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(v));
  }
  ParameterStore store;
  const std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name(r.take(r.u16()));
    const std::uint8_t rank = r.u8();
    if (rank == 0) throw std::runtime_error("checkpoint: rank-0 parameter " + name);
    Shape shape;
    for (std::uint8_t d = 0; d < rank; ++d) shape.push_back(r.u32());
    Tensor t(shape);
    for (double& v : t.data()) v = double(r.f32());
    store.add(name, std::move(t));
  }
  const std::uint32_t len = r.u32();
  const auto trailer = r.take(len);
  if (!r.done()) throw std::runtime_error("checkpoint: trailing bytes");
  if (metadata) *metadata = json::parse(trailer);
  return store;
}

void save_store(const ParameterStore& store, const json& metadata, const std::filesystem::path& path) {
  const std::string bytes = encode_store(store, metadata);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(bytes.data(), std::streamsize(bytes.size()));
}

ParameterStore load_store(const std::filesystem::path& path, json* metadata) {
  return decode_store(read_file(path), metadata);
}

json config_to_json(const ModelConfig& c) {
  return {{"hidden_dim", c.hidden_dim},       {"embed_dim", c.embed_dim},
          {"n_layers", c.n_layers},           {"mlp_dim", c.mlp_dim},
          {"image_tokens", c.image_tokens},   {"max_text_tokens", c.max_text_tokens},
          {"temperature_init", c.temperature_init}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.n_layers = j.value("n_layers", c.n_layers);
  c.mlp_dim = j.value("mlp_dim", c.mlp_dim);
  c.image_tokens = j.value("image_tokens", c.image_tokens);
  c.max_text_tokens = j.value("max_text_tokens", c.max_text_tokens);
  c.temperature_init = j.value("temperature_init", c.temperature_init);
  c.validate();
  return c;
}

void save_checkpoint(const MiniClipModel& model, json metadata, const std::filesystem::path& path) {
  metadata["model"] = {{"config", config_to_json(model.config())}, {"vocab", model.tokenizer().vocab()}};
  save_store(model.parameters(), metadata, path);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  json meta;
  ParameterStore store = load_store(path, &meta);
  if (!meta.contains("model")) throw std::runtime_error("checkpoint " + path.string() + " has no model record");
  const auto& m = meta.at("model");
  MiniClipModel model(config_from_json(m.at("config")), m.at("vocab").get<std::vector<std::string>>(),
                      std::move(store));
  return {std::move(model), std::move(meta)};
}

}  // namespace ifsl
