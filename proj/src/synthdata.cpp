#include "seqpl/synthdata.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace seqpl {

namespace {

void validate(const SynthConfig& c) {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("SynthConfig: " + msg); };
  if (c.num_symbols < 1 || c.num_symbols > 26) fail("num_symbols must be in [1, 26]");
  if (c.len_min < 1 || c.len_min > c.len_max) fail("bad length range");
  if (c.len_max > c.s_max - 1) fail("len_max leaves no room for EOS within s_max");
  if (c.len_max > 1 && c.num_symbols < 2) fail("repeat-free strings need >= 2 symbols");
  if (c.frames_min < 1 || c.frames_min > c.frames_max) fail("bad frames-per-symbol range");
  if (c.channels < 1) fail("channels must be positive");
  if (c.sigma < 0.0) fail("sigma must be >= 0");
  if (c.confusable_mix < 0.0 || c.confusable_mix >= 1.0) fail("confusable_mix must be in [0,1)");
  for (auto [a, b] : c.confusable_pairs)
    if (a < 0 || b < 0 || a >= c.num_symbols || b >= c.num_symbols || a == b)
      fail("bad confusable pair");
}

void renormalize_row(Matrix& m, int row) {
  double norm = 0.0;
  for (int j = 0; j < m.cols; ++j) norm += m(row, j) * m(row, j);
  norm = std::sqrt(norm);
  if (norm == 0.0) throw std::runtime_error("symbol embedding degenerated to zero");
  for (int j = 0; j < m.cols; ++j) m(row, j) /= norm;
}

}  // namespace

Vocabulary config_vocabulary(const SynthConfig& config) {
  validate(config);
  std::vector<std::string> symbols;
  for (int i = 0; i < config.num_symbols; ++i)
    symbols.push_back(std::string(1, static_cast<char>('a' + i)));
  return Vocabulary(std::move(symbols));
}

Matrix symbol_embeddings(const SynthConfig& config) {
  validate(config);
  Rng rng(Rng::mix(config.embed_seed, 0x656d626564ULL));
  Matrix base(config.num_symbols, config.channels);
  for (int i = 0; i < config.num_symbols; ++i) {
    for (int j = 0; j < config.channels; ++j) base(i, j) = rng.normal();
    renormalize_row(base, i);
  }
  // pull pair members toward each other, always from the original vectors
  Matrix mixed = base;
  const double m = config.confusable_mix;
  for (auto [a, b] : config.confusable_pairs) {
    for (int j = 0; j < config.channels; ++j) {
      mixed(a, j) = (1.0 - m) * base(a, j) + m * base(b, j);
      mixed(b, j) = (1.0 - m) * base(b, j) + m * base(a, j);
    }
    renormalize_row(mixed, a);
    renormalize_row(mixed, b);
  }
  return mixed;
}

std::vector<LabeledSample> generate(const SynthConfig& config, int n) {
  validate(config);
  if (n < 1) throw std::invalid_argument("generate: n must be >= 1");
  const Matrix embed = symbol_embeddings(config);

  std::vector<LabeledSample> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    Rng rng(Rng::mix(config.seed, static_cast<uint64_t>(i)));
    const int len = config.len_min + rng.uniform_int(config.len_max - config.len_min + 1);

    std::vector<int> symbols;
    for (int s = 0; s < len; ++s) {
      if (s == 0) {
        symbols.push_back(rng.uniform_int(config.num_symbols));
      } else {
        // no adjacent repeats, so run boundaries stay recoverable
        int pick = rng.uniform_int(config.num_symbols - 1);
        if (pick >= symbols.back()) ++pick;
        symbols.push_back(pick);
      }
    }

    std::vector<std::vector<double>> frames;
    for (int sym : symbols) {
      const int run = config.frames_min + rng.uniform_int(config.frames_max - config.frames_min + 1);
      for (int r = 0; r < run; ++r) {
        std::vector<double> frame(config.channels);
        for (int j = 0; j < config.channels; ++j)
          frame[j] = embed(sym, j) + config.sigma * rng.normal();
        frames.push_back(std::move(frame));
      }
    }

    LabeledSample sample;
    sample.id = i;
    sample.features.frames = Matrix(static_cast<int>(frames.size()), config.channels);
    for (size_t r = 0; r < frames.size(); ++r)
      for (int j = 0; j < config.channels; ++j)
        sample.features.frames(static_cast<int>(r), j) = frames[r][j];
    for (int sym : symbols) sample.label.push_back(Vocabulary::kNumReserved + sym);
    sample.label.push_back(Vocabulary::kEos);
    out.push_back(std::move(sample));
  }
  return out;
}

DatasetSplit split(const std::vector<LabeledSample>& dataset, double fraction, uint64_t seed) {
  if (!(fraction > 0.0) || fraction > 1.0)
    throw std::invalid_argument("split: fraction must be in (0, 1], got " +
                                std::to_string(fraction));
  const int n = static_cast<int>(dataset.size());
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  Rng rng(Rng::mix(seed, 0x73706c6974ULL));
  for (int i = n - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(i + 1)]);

  const int n_l = static_cast<int>(std::llround(fraction * n));
  DatasetSplit out;
  out.fraction = fraction;
  out.seed = seed;
  for (int i = 0; i < n; ++i) {
    const LabeledSample& s = dataset[order[i]];
    if (i < n_l)
      out.labeled.push_back(s);
    else
      out.unlabeled.emplace_back(s.id, s.features, s.label);
  }
  return out;
}

void save_dataset(const std::string& path, const Vocabulary& vocab, int channels,
                  const std::vector<LabeledSample>& samples, bool with_labels) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_dataset: cannot open " + path);

  nlohmann::json header;
  header["format"] = "seqpl-dataset";
  header["version"] = 1;
  std::vector<std::string> real(vocab.symbols().begin() + Vocabulary::kNumReserved,
                                vocab.symbols().end());
  header["symbols"] = real;
  header["channels"] = channels;
  f << header.dump() << '\n';

  for (const LabeledSample& s : samples) {
    if (s.features.channels() != channels)
      throw std::invalid_argument("save_dataset: sample " + std::to_string(s.id) +
                                  " has wrong channel count");
    nlohmann::json line;
    line["id"] = s.id;
    if (with_labels && !s.label.empty())
      line["label"] = vocab.decode_tokens(s.label);
    else
      line["label"] = nullptr;
    nlohmann::json rows = nlohmann::json::array();
    for (int r = 0; r < s.features.length(); ++r) {
      nlohmann::json row = nlohmann::json::array();
      for (int c = 0; c < channels; ++c) row.push_back(s.features.frames(r, c));
      rows.push_back(std::move(row));
    }
    line["frames"] = std::move(rows);
    f << line.dump() << '\n';
  }
  if (!f) throw std::runtime_error("save_dataset: write failed for " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_dataset: cannot open " + path);

  auto fail = [&](int line_no, const std::string& msg) {
    throw std::runtime_error("load_dataset: " + path + " line " + std::to_string(line_no) +
                             ": " + msg);
  };
  auto parse = [&](const std::string& text, int line_no) {
    try {
      return nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      fail(line_no, std::string("bad JSON (") + e.what() + ")");
      return nlohmann::json();  // unreachable
    }
  };

  std::string line;
  if (!std::getline(f, line)) fail(1, "missing header");
  nlohmann::json header = parse(line, 1);
  if (header.value("format", "") != "seqpl-dataset") fail(1, "not a dataset file");
  if (header.value("version", -1) != 1) fail(1, "unsupported version");

  Dataset ds;
  ds.vocab = Vocabulary(header.at("symbols").get<std::vector<std::string>>());
  ds.channels = header.at("channels").get<int>();
  if (ds.channels < 1) fail(1, "bad channel count");

  int line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j = parse(line, line_no);
    LabeledSample s;
    if (!j.contains("id") || !j.contains("label") || !j.contains("frames"))
      fail(line_no, "missing id/label/frames");
    s.id = j.at("id").get<int64_t>();
    if (!j.at("label").is_null()) {
      try {
        s.label = ds.vocab.encode_label(j.at("label").get<std::string>());
      } catch (const std::exception& e) {
        fail(line_no, e.what());
      }
    }
    const nlohmann::json& rows = j.at("frames");
    if (!rows.is_array() || rows.empty()) fail(line_no, "frames must be a non-empty array");
    s.features.frames = Matrix(static_cast<int>(rows.size()), ds.channels);
    for (size_t r = 0; r < rows.size(); ++r) {
      if (!rows[r].is_array() || static_cast<int>(rows[r].size()) != ds.channels)
        fail(line_no, "frame row " + std::to_string(r) + " width != channels");
      for (int c = 0; c < ds.channels; ++c)
        s.features.frames(static_cast<int>(r), c) = rows[r][c].get<double>();
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace seqpl
