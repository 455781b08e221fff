#include "seqpl/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace seqpl {

namespace {

constexpr const char* kFormat = "seqpl-checkpoint";
constexpr int kVersion = 1;

// FNV-1a over the little-endian bit patterns of every weight (stable walk
// order) plus dims and symbols, so a flipped value is caught at load time.
class Fnv1a64 {
 public:
  void bytes(const void* p, size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (size_t i = 0; i < n; ++i) {
      hash_ ^= b[i];
      hash_ *= 0x100000001b3ULL;
    }
  }
  void number(uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      unsigned char b = static_cast<unsigned char>(v >> (8 * i));
      bytes(&b, 1);
    }
  }
  void real(double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    number(bits);
  }
  void str(const std::string& s) {
    number(s.size());
    bytes(s.data(), s.size());
  }
  uint64_t value() const { return hash_; }

 private:
  uint64_t hash_ = 0xcbf29ce484222325ULL;
};

uint64_t digest(const ModelParams& params, const Vocabulary& vocab) {
  Fnv1a64 h;
  h.number(static_cast<uint64_t>(params.channels));
  h.number(static_cast<uint64_t>(params.hidden));
  h.number(static_cast<uint64_t>(params.vocab));
  h.number(static_cast<uint64_t>(params.max_len));
  for (const auto& s : vocab.symbols()) h.str(s);
  params.for_each_param([&](const std::string& name, const Matrix& m) {
    h.str(name);
    h.number(static_cast<uint64_t>(m.rows));
    h.number(static_cast<uint64_t>(m.cols));
    for (double v : m.data) h.real(v);
  });
  return h.value();
}

std::string hex64(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

}  // namespace

std::string checkpoint_to_string(const ModelParams& params, const Vocabulary& vocab) {
  if (vocab.size() != params.vocab)
    throw std::invalid_argument("checkpoint: vocabulary size " + std::to_string(vocab.size()) +
                                " does not match model vocab " + std::to_string(params.vocab));
  nlohmann::json j;
  j["format"] = kFormat;
  j["version"] = kVersion;
  j["channels"] = params.channels;
  j["hidden"] = params.hidden;
  j["vocab"] = params.vocab;
  j["max_len"] = params.max_len;
  std::vector<std::string> real(vocab.symbols().begin() + Vocabulary::kNumReserved,
                                vocab.symbols().end());
  j["symbols"] = real;
  nlohmann::json weights = nlohmann::json::object();
  params.for_each_param([&](const std::string& name, const Matrix& m) {
    weights[name] = {{"rows", m.rows}, {"cols", m.cols}, {"data", m.data}};
  });
  j["weights"] = std::move(weights);
  j["checksum"] = hex64(digest(params, vocab));
  return j.dump();
}

Checkpoint checkpoint_from_string(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error(std::string("checkpoint: not valid JSON: ") + e.what());
  }
  if (!j.is_object() || j.value("format", "") != kFormat)
    throw std::runtime_error("checkpoint: unrecognized format");
  if (j.value("version", -1) != kVersion)
    throw std::runtime_error("checkpoint: unsupported version " +
                             std::to_string(j.value("version", -1)));

  Checkpoint ck;
  ck.vocab = Vocabulary(j.at("symbols").get<std::vector<std::string>>());
  ModelParams& p = ck.params;
  p.channels = j.at("channels").get<int>();
  p.hidden = j.at("hidden").get<int>();
  p.vocab = j.at("vocab").get<int>();
  p.max_len = j.at("max_len").get<int>();
  if (ck.vocab.size() != p.vocab)
    throw std::runtime_error("checkpoint: symbol list does not match vocab size");

  // Allocate shapes with init(), then overwrite each matrix from the file.
  p = ModelParams::init(p.channels, p.hidden, p.vocab, p.max_len, 0);
  const nlohmann::json& weights = j.at("weights");
  p.for_each_param([&](const std::string& name, Matrix& m) {
    if (!weights.contains(name))
      throw std::runtime_error("checkpoint: missing weight " + name);
    const nlohmann::json& wj = weights.at(name);
    if (wj.at("rows").get<int>() != m.rows || wj.at("cols").get<int>() != m.cols)
      throw std::runtime_error("checkpoint: shape mismatch for " + name);
    auto data = wj.at("data").get<std::vector<double>>();
    if (static_cast<int>(data.size()) != m.size())
      throw std::runtime_error("checkpoint: bad data length for " + name);
    m.data = std::move(data);
  });

  const std::string expect = hex64(digest(p, ck.vocab));
  if (j.value("checksum", "") != expect)
    throw std::runtime_error("checkpoint: checksum mismatch (file corrupt?)");
  return ck;
}

void save_checkpoint(const ModelParams& params, const Vocabulary& vocab,
                     const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  f << checkpoint_to_string(params, vocab) << '\n';
  if (!f) throw std::runtime_error("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return checkpoint_from_string(text);
}

}  // namespace seqpl
