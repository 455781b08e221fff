#include "seqpl/seqpl.h"

#include <cstdlib>
#include <cstring>
#include <stdexcept>
#include <string>

#include "json.hpp"
#include "seqpl/checkpoint.hpp"
#include "seqpl/decode.hpp"
#include "seqpl/experiment.hpp"

struct seqpl_model {
  seqpl::Checkpoint ck;
};

namespace {

thread_local std::string g_last_error;

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out) std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

std::string safe(const char* s) { return s ? std::string(s) : std::string(); }

void clear(char** result_json) {
  if (result_json) *result_json = nullptr;
}

bool require(const char* s, const char* name) {
  if (s && *s) return true;
  g_last_error = std::string(name) + " must be a non-empty string";
  return false;
}

// "cannot open" / "write failed" are the filesystem-level failures our
// internals raise; everything else unexpected is a runtime error.
seqpl_status_t classify(const std::string& msg) {
  if (msg.find("cannot open") != std::string::npos ||
      msg.find("write failed") != std::string::npos)
    return SEQPL_ERR_IO;
  return SEQPL_ERR_RUNTIME;
}

template <typename F>
seqpl_status_t run(char** result_json, F&& body) {
  if (result_json) *result_json = nullptr;
  try {
    std::string out = body();
    if (result_json) {
      *result_json = dup_string(out);
      if (!*result_json) {
        g_last_error = "out of memory";
        return SEQPL_ERR_RUNTIME;
      }
    }
    g_last_error.clear();
    return SEQPL_OK;
  } catch (const std::invalid_argument& e) {
    g_last_error = e.what();
    return SEQPL_ERR_INVALID_ARGUMENT;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return classify(g_last_error);
  } catch (...) {
    g_last_error = "unknown error";
    return SEQPL_ERR_RUNTIME;
  }
}

}  // namespace

extern "C" {

const char* seqpl_version(void) { return seqpl::kToolVersion; }

const char* seqpl_last_error(void) { return g_last_error.c_str(); }

void seqpl_string_free(char* s) { std::free(s); }

seqpl_status_t seqpl_gen_data(const char* config_json, const char* out_dir,
                              char** result_json) {
  clear(result_json);
  if (!require(out_dir, "out_dir")) return SEQPL_ERR_INVALID_ARGUMENT;
  return run(result_json,
             [&] { return seqpl::cmd_gen_data(safe(config_json), out_dir); });
}

seqpl_status_t seqpl_self_train(const char* config_json, const char* data_dir,
                                const char* run_dir, char** result_json) {
  clear(result_json);
  if (!require(data_dir, "data_dir") || !require(run_dir, "run_dir"))
    return SEQPL_ERR_INVALID_ARGUMENT;
  return run(result_json,
             [&] { return seqpl::cmd_self_train(safe(config_json), data_dir, run_dir); });
}

seqpl_status_t seqpl_eval(const char* checkpoint_path, const char* dataset_path,
                          const char* options_json, char** result_json) {
  clear(result_json);
  if (!require(checkpoint_path, "checkpoint_path") || !require(dataset_path, "dataset_path"))
    return SEQPL_ERR_INVALID_ARGUMENT;
  return run(result_json, [&] {
    return seqpl::cmd_eval(checkpoint_path, dataset_path, safe(options_json));
  });
}

seqpl_status_t seqpl_rejection(const char* checkpoint_path, const char* dataset_path,
                               const char* options_json, const char* out_dir,
                               char** result_json) {
  clear(result_json);
  if (!require(checkpoint_path, "checkpoint_path") ||
      !require(dataset_path, "dataset_path") || !require(out_dir, "out_dir"))
    return SEQPL_ERR_INVALID_ARGUMENT;
  return run(result_json, [&] {
    return seqpl::cmd_rejection(checkpoint_path, dataset_path, safe(options_json), out_dir);
  });
}

seqpl_status_t seqpl_calibrate(const char* checkpoint_path, const char* dataset_path,
                               const char* options_json, const char* out_dir,
                               char** result_json) {
  clear(result_json);
  if (!require(checkpoint_path, "checkpoint_path") ||
      !require(dataset_path, "dataset_path") || !require(out_dir, "out_dir"))
    return SEQPL_ERR_INVALID_ARGUMENT;
  return run(result_json, [&] {
    return seqpl::cmd_calibrate(checkpoint_path, dataset_path, safe(options_json), out_dir);
  });
}

seqpl_status_t seqpl_model_load(const char* checkpoint_path, seqpl_model_t** out_model) {
  if (!out_model) {
    g_last_error = "out_model must not be NULL";
    return SEQPL_ERR_INVALID_ARGUMENT;
  }
  *out_model = nullptr;
  if (!require(checkpoint_path, "checkpoint_path")) return SEQPL_ERR_INVALID_ARGUMENT;
  return run(nullptr, [&] {
    *out_model = new seqpl_model{seqpl::load_checkpoint(checkpoint_path)};
    return std::string();
  });
}

void seqpl_model_free(seqpl_model_t* model) { delete model; }

seqpl_status_t seqpl_model_info(const seqpl_model_t* model, char** result_json) {
  clear(result_json);
  if (!model) {
    g_last_error = "model must not be NULL";
    return SEQPL_ERR_INVALID_ARGUMENT;
  }
  return run(result_json, [&] {
    nlohmann::json j;
    j["channels"] = model->ck.params.channels;
    j["hidden"] = model->ck.params.hidden;
    j["vocab"] = model->ck.params.vocab;
    j["max_len"] = model->ck.params.max_len;
    std::vector<std::string> real(
        model->ck.vocab.symbols().begin() + seqpl::Vocabulary::kNumReserved,
        model->ck.vocab.symbols().end());
    j["symbols"] = real;
    return j.dump();
  });
}

seqpl_status_t seqpl_model_predict(const seqpl_model_t* model, const double* frames,
                                   int w, int c, int beam_width, char** result_json) {
  clear(result_json);
  if (!model || !frames) {
    g_last_error = !model ? "model must not be NULL" : "frames must not be NULL";
    return SEQPL_ERR_INVALID_ARGUMENT;
  }
  return run(result_json, [&] {
    if (w < 1) throw std::invalid_argument("frame count must be >= 1");
    if (c != model->ck.params.channels)
      throw std::invalid_argument("channel count " + std::to_string(c) +
                                  " does not match model channels " +
                                  std::to_string(model->ck.params.channels));
    seqpl::FeatureSequence v;
    v.frames = seqpl::Matrix(w, c);
    std::memcpy(v.frames.data.data(), frames, sizeof(double) * size_t(w) * size_t(c));
    seqpl::HypothesisSet hyps =
        seqpl::beam_search(model->ck.params, v, beam_width, model->ck.params.max_len - 1);
    const seqpl::Hypothesis& top = seqpl::assign_pseudo_label(hyps);
    nlohmann::json j;
    j["label"] = model->ck.vocab.decode_tokens(top.tokens);
    j["log_prob"] = top.log_prob;
    j["truncated"] = top.truncated;
    nlohmann::json hj = nlohmann::json::array();
    for (const seqpl::Hypothesis& h : hyps.hyps) {
      nlohmann::json e;
      e["label"] = model->ck.vocab.decode_tokens(h.tokens);
      e["log_prob"] = h.log_prob;
      e["truncated"] = h.truncated;
      hj.push_back(std::move(e));
    }
    j["hypotheses"] = std::move(hj);
    return j.dump();
  });
}

}  // extern "C"
