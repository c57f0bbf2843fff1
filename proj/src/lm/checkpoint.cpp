#include "ctikg/lm/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "ctikg/common/error.hpp"
#include "ctikg/common/text.hpp"

namespace ctikg::lm {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

namespace {

constexpr char kMagic[6] = {'C', 'T', 'I', 'K', 'G', '\0'};

template <typename Int>
void put(std::string& out, Int v) {
  char buf[sizeof(Int)];
  std::memcpy(buf, &v, sizeof(Int));
  out.append(buf, sizeof(Int));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename Int>
  Int get(const char* what) {
    need(sizeof(Int), what);
    Int v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(Int));
    pos_ += sizeof(Int);
    return v;
  }

  std::string take(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      fail(Errc::truncated, std::string("checkpoint ends inside ") + what);
    }
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

using Named = std::vector<std::pair<std::string, const Tensor<float>*>>;

Named all_tensors(const TrainState<float>& s) {
  Named out = s.params.named_tensors();
  for (auto& [name, t] : s.first_moment.named_tensors()) out.emplace_back("adam.m." + name, t);
  for (auto& [name, t] : s.second_moment.named_tensors()) out.emplace_back("adam.v." + name, t);
  return out;
}

}  // namespace

std::string serialize_checkpoint(const TrainState<float>& state, const nlohmann::json& metadata) {
  const auto tensors = all_tensors(state);
  nlohmann::json header;
  header["format"] = "ctikg-checkpoint";
  header["config"] = to_json(state.params.config);
  header["step"] = state.step;
  const auto rng = state.rng.state();
  header["rng"] = nlohmann::json::array();
  for (auto w : rng) header["rng"].push_back(std::to_string(w));
  header["tensor_count"] = tensors.size();
  header["metadata"] = metadata;
  const std::string header_text = header.dump();

  std::string out(kMagic, sizeof(kMagic));
  put<std::uint16_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(header_text.size()));
  out += header_text;
  for (const auto& [name, t] : tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t->shape.size()));
    for (auto dim : t->shape) put<std::uint32_t>(out, dim);
    const auto* raw = reinterpret_cast<const char*>(t->data.data());
    out.append(raw, t->data.size() * sizeof(float));
  }
  return out;
}

TrainState<float> deserialize_checkpoint(const std::string& bytes) {
  Reader in(bytes);
  if (in.take(sizeof(kMagic), "magic") != std::string(kMagic, sizeof(kMagic))) {
    fail(Errc::format, "not a ctikg checkpoint (bad magic)");
  }
  const auto version = in.get<std::uint16_t>("version");
  if (version != kCheckpointVersion) {
    fail(Errc::version, "checkpoint format version " + std::to_string(version) +
                            ", expected " + std::to_string(kCheckpointVersion));
  }
  const auto header_len = in.get<std::uint32_t>("header length");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(in.take(header_len, "header"));
  } catch (const nlohmann::json::parse_error& e) {
    fail(Errc::format, std::string("checkpoint header is not JSON: ") + e.what());
  }
  if (!header.is_object() || header.value("format", "") != "ctikg-checkpoint") {
    fail(Errc::format, "checkpoint header lacks format tag");
  }

  TrainState<float> state;
  try {
    const LmConfig config = config_from_json(header.at("config"));
    state = TrainState<float>::from_params(LmParams<float>::zeros(config), 0);
    state.step = header.at("step").get<std::uint64_t>();
    std::array<std::uint64_t, 4> rng{};
    for (std::size_t i = 0; i < 4; ++i) {
      rng[i] = std::stoull(header.at("rng").at(i).get<std::string>());
    }
    state.rng.set_state(rng);
    if (header.at("tensor_count").get<std::size_t>() != all_tensors(state).size()) {
      fail(Errc::shape_mismatch, "tensor count does not match the model config");
    }
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::format, std::string("bad checkpoint header: ") + e.what());
  }

  std::vector<std::pair<std::string, Tensor<float>*>> targets = state.params.named_tensors();
  for (auto& [name, t] : state.first_moment.named_tensors()) targets.emplace_back("adam.m." + name, t);
  for (auto& [name, t] : state.second_moment.named_tensors()) targets.emplace_back("adam.v." + name, t);

  for (auto& [expected_name, tensor] : targets) {
    const auto name_len = in.get<std::uint32_t>("tensor name length");
    const std::string name = in.take(name_len, "tensor name");
    if (name != expected_name) {
      fail(Errc::shape_mismatch, "expected tensor '" + expected_name + "', found '" + name + "'");
    }
    const auto rank = in.get<std::uint32_t>("tensor rank");
    std::vector<std::uint32_t> dims(rank);
    for (auto& dim : dims) dim = in.get<std::uint32_t>("tensor dims");
    if (dims != tensor->shape) fail(Errc::shape_mismatch, "tensor '" + name + "' has wrong shape");
    const std::string raw = in.take(tensor->data.size() * sizeof(float), "tensor data");
    std::memcpy(tensor->data.data(), raw.data(), raw.size());
  }
  if (!in.done()) fail(Errc::format, "trailing bytes after the last tensor");
  return state;
}

void save_checkpoint(const TrainState<float>& state, const std::filesystem::path& path,
                     const nlohmann::json& metadata) {
  text::write_file(path, serialize_checkpoint(state, metadata));
}

TrainState<float> load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(text::read_file(path));
}

}  // namespace ctikg::lm
