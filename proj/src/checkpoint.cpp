#include "ktm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace ktm {

static_assert(std::endian::native == std::endian::little, "checkpoint codec assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'K', 'T', 'M', 'C', 'K', 'P', 'T', '\0'};

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes, std::size_t limit) : bytes_(bytes), limit_(limit) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string get_string(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void get_doubles(std::vector<double>& out, std::size_t n) {
    if (n > (limit_ - pos_) / sizeof(double)) throw CheckpointCorrupt("checkpoint: truncated tensor data");
    out.resize(n);
    std::memcpy(out.data(), bytes_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
  }

  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (n > limit_ - pos_) throw CheckpointCorrupt("checkpoint: truncated");
  }
  const std::string& bytes_;
  std::size_t limit_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string model_config_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["hidden"] = c.hidden;
  j["layers"] = c.layers;
  j["heads"] = c.heads;
  j["max_len"] = c.max_len;
  j["ffn_expansion"] = c.ffn_expansion;
  j["dropout"] = c.dropout;
  j["attention"] = to_string(c.attention);
  j["embedding"] = to_string(c.embedding);
  j["kernel"] = c.kernel;
  j["literal_eq7"] = c.literal_eq7;
  j["causal"] = c.causal;
  j["distance_grad"] = c.distance_grad;
  j["seed"] = c.seed;
  j["num_questions"] = c.num_questions;
  j["num_concepts"] = c.num_concepts;
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
  try {
    auto j = nlohmann::json::parse(text);
    ModelConfig c;
    c.hidden = j.at("hidden").get<std::size_t>();
    c.layers = j.at("layers").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.max_len = j.at("max_len").get<std::size_t>();
    c.ffn_expansion = j.at("ffn_expansion").get<std::size_t>();
    c.dropout = j.at("dropout").get<double>();
    c.attention = parse_attention_variant(j.at("attention").get<std::string>());
    c.embedding = parse_embedding_strategy(j.at("embedding").get<std::string>());
    c.kernel = j.at("kernel").get<std::size_t>();
    c.literal_eq7 = j.at("literal_eq7").get<bool>();
    c.causal = j.at("causal").get<bool>();
    c.distance_grad = j.at("distance_grad").get<bool>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.num_questions = j.at("num_questions").get<std::size_t>();
    c.num_concepts = j.at("num_concepts").get<std::size_t>();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointCorrupt(std::string("checkpoint: bad config block: ") + e.what());
  }
}

Checkpoint snapshot(const KnowledgeTracingModel& model) {
  Checkpoint ckpt;
  ckpt.config_json = model_config_json(model.config());
  for (const auto& [name, t] : model.named_parameters()) {
    ckpt.tensors.push_back({name, t.shape(), std::vector<double>(t.data().begin(), t.data().end())});
  }
  return ckpt;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, ckpt.config_json.size());
  out += ckpt.config_json;
  put<std::uint64_t>(out, ckpt.tensors.size());
  for (const auto& t : ckpt.tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) put<std::uint64_t>(out, d);
    out.append(reinterpret_cast<const char*>(t.values.data()), t.values.size() * sizeof(double));
  }
  put<std::uint64_t>(out, fnv1a64(out));
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof(kMagic) + sizeof(std::uint32_t) + sizeof(std::uint64_t)) {
    throw CheckpointCorrupt("checkpoint: file too short");
  }
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) throw CheckpointCorrupt("checkpoint: bad magic");
  const auto body = bytes.size() - sizeof(std::uint64_t);
  std::uint64_t stored = 0;
  std::memcpy(&stored, bytes.data() + body, sizeof(stored));
  if (stored != fnv1a64(bytes.substr(0, body))) throw CheckpointCorrupt("checkpoint: checksum mismatch");

  Reader r(bytes, body);
  r.get_string(sizeof(kMagic));
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointCorrupt("checkpoint: unsupported version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.config_json = r.get_string(static_cast<std::size_t>(r.get<std::uint64_t>()));
  const auto count = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedArray t;
    t.name = r.get_string(r.get<std::uint32_t>());
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) throw CheckpointCorrupt("checkpoint: implausible rank for " + t.name);
    for (std::uint32_t k = 0; k < rank; ++k) t.shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>()));
    r.get_doubles(t.values, numel_of(t.shape));
    ckpt.tensors.push_back(std::move(t));
  }
  if (r.pos() != body) throw CheckpointCorrupt("checkpoint: trailing bytes");
  return ckpt;
}

void save_checkpoint(const KnowledgeTracingModel& model, const std::string& path) {
  const auto bytes = encode_checkpoint(snapshot(model));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(path + ": cannot write checkpoint");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error(path + ": checkpoint write failed");
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointCorrupt(path + ": cannot open checkpoint");
  std::ostringstream buf;
  buf << in.rdbuf();
  return decode_checkpoint(buf.str());
}

void restore(KnowledgeTracingModel& model, const Checkpoint& ckpt) {
  auto params = model.named_parameters();
  if (params.size() != ckpt.tensors.size()) {
    throw CheckpointMismatch("checkpoint: holds " + std::to_string(ckpt.tensors.size()) + " tensors, model has " +
                             std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, t] = params[i];
    const auto& src = ckpt.tensors[i];
    if (src.name != name || src.shape != t.shape()) {
      throw CheckpointMismatch("checkpoint: expected " + name + shape_str(t.shape()) + ", found " + src.name +
                               shape_str(src.shape));
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = params[i].second.mutable_data();
    std::copy(ckpt.tensors[i].values.begin(), ckpt.tensors[i].values.end(), dst.begin());
  }
}

std::uint64_t parameter_hash(const KnowledgeTracingModel& model) { return fnv1a64(encode_checkpoint(snapshot(model))); }

}  // namespace ktm
