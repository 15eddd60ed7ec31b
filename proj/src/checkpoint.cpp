#include "uraft/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "uraft/error.hpp"
#include "uraft/io.hpp"

namespace uraft {

namespace {

constexpr char kMagic[4] = {'U', 'R', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

template <typename U>
void put_le(std::ostream& out, U v) {
  unsigned char b[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), sizeof(U));
}

template <typename U>
U get_le(std::istream& in) {
  unsigned char b[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(b), sizeof(U))) throw FormatError("checkpoint truncated");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= U(b[i]) << (8 * i);
  return v;
}

}  // namespace

void to_json(nlohmann::json& j, const StepRecord& r) {
  j = nlohmann::json{{"step", r.step},
                     {"forward_similarity", r.loss.forward_similarity},
                     {"backward_similarity", r.loss.backward_similarity},
                     {"smoothness", r.loss.smoothness},
                     {"total", r.loss.total},
                     {"objective", r.objective},
                     {"lr", r.lr},
                     {"grad_norm", r.grad_norm},
                     {"wall_time_s", r.wall_time_s}};
}

void from_json(const nlohmann::json& j, StepRecord& r) {
  r.step = j.at("step").get<std::int64_t>();
  r.loss.forward_similarity = j.at("forward_similarity").get<double>();
  r.loss.backward_similarity = j.at("backward_similarity").get<double>();
  r.loss.smoothness = j.at("smoothness").get<double>();
  r.loss.total = j.at("total").get<double>();
  r.objective = j.value("objective", r.loss.total);
  r.lr = j.at("lr").get<double>();
  r.grad_norm = j.value("grad_norm", 0.0);
  r.wall_time_s = j.at("wall_time_s").get<double>();
}

Checkpoint snapshot(const FlowNet<float>& net, TrainState state) {
  Checkpoint c;
  c.config = net.config();
  c.seed = net.seed();
  c.model_id = net.id();
  for (const auto& p : net.parameters()) {
    c.names.push_back(p.name);
    c.tensors.push_back(p.var->value);
  }
  c.state = std::move(state);
  return c;
}

FlowNet<float> instantiate(const Checkpoint& ckpt) {
  FlowNet<float> net(ckpt.config, ckpt.seed);
  auto& params = net.parameters();
  if (params.size() != ckpt.tensors.size()) {
    throw FormatError("checkpoint has " + std::to_string(ckpt.tensors.size()) +
                      " tensors, model expects " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name != ckpt.names[i] || !params[i].var->value.same_shape(ckpt.tensors[i])) {
      throw FormatError("checkpoint tensor " + ckpt.names[i] + " does not match the model");
    }
    params[i].var->value = ckpt.tensors[i];
  }
  net.set_id(ckpt.model_id);
  return net;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  nlohmann::json header;
  header["config"] = ckpt.config;
  header["seed"] = ckpt.seed;
  header["model_id"] = ckpt.model_id;
  header["steps"] = ckpt.state.steps;
  header["history"] = ckpt.state.history;
  header["metadata"] = ckpt.metadata;
  auto dir = nlohmann::json::array();
  for (std::size_t i = 0; i < ckpt.tensors.size(); ++i) {
    const auto& t = ckpt.tensors[i];
    dir.push_back({{"name", ckpt.names[i]}, {"shape", {t.c, t.h, t.w}}});
  }
  header["tensors"] = dir;
  const std::string text = header.dump();

  write_atomically(path, [&](std::ostream& out) {
    out.write(kMagic, 4);
    put_le<std::uint32_t>(out, kVersion);
    put_le<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& t : ckpt.tensors)
      for (float v : t.data) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  });

  nlohmann::json sidecar{{"model_config", ckpt.config},
                         {"seed", ckpt.seed},
                         {"model_id", ckpt.model_id},
                         {"steps", ckpt.state.steps},
                         {"metadata", ckpt.metadata}};
  auto side = path;
  side += ".json";
  write_atomically(side, [&](std::ostream& out) { out << sidecar.dump(2) << '\n'; });
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArgumentError("cannot open checkpoint " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError(path.string() + " is not a checkpoint (bad magic)");
  }
  if (get_le<std::uint32_t>(in) != kVersion) throw FormatError("unsupported checkpoint version");
  const auto length = get_le<std::uint64_t>(in);
  if (length > (std::uint64_t(1) << 32)) throw FormatError("implausible checkpoint header");
  std::string text(length, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(length))) {
    throw FormatError("checkpoint header truncated");
  }
  Checkpoint c;
  try {
    const auto header = nlohmann::json::parse(text);
    c.config = header.at("config").get<ModelConfig>();
    c.seed = header.at("seed").get<std::uint64_t>();
    c.model_id = header.value("model_id", c.model_id);
    c.state.steps = header.at("steps").get<std::int64_t>();
    c.state.history = header.at("history").get<std::vector<StepRecord>>();
    c.metadata = header.value("metadata", nlohmann::json::object());
    for (const auto& t : header.at("tensors")) {
      const auto shape = t.at("shape").get<std::vector<int>>();
      if (shape.size() != 3) throw FormatError("bad tensor shape");
      c.names.push_back(t.at("name").get<std::string>());
      c.tensors.emplace_back(shape[0], shape[1], shape[2]);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }
  for (auto& t : c.tensors)
    for (float& v : t.data) v = std::bit_cast<float>(get_le<std::uint32_t>(in));
  return c;
}

}  // namespace uraft
