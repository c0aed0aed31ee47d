#include <physvae/physvae.h>

#include <cstring>
#include <exception>
#include <string>

#include <json.hpp>

#include "core/pipeline.hpp"
#include "core/vae.hpp"

namespace {

thread_local std::string g_last_error;

pv_status status_of(pv::ErrKind kind) {
  switch (kind) {
    case pv::ErrKind::Config:
    case pv::ErrKind::Shape:
    case pv::ErrKind::Domain:
    case pv::ErrKind::Contract:
      return PV_ERR_CONFIG;
    case pv::ErrKind::Format:
    case pv::ErrKind::Io:
      return PV_ERR_IO;
    case pv::ErrKind::Runtime:
      return PV_ERR_RUNTIME;
  }
  return PV_ERR_RUNTIME;
}

template <class Fn>
pv_status guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return PV_OK;
  } catch (const pv::Error& e) {
    g_last_error = e.what();
    return status_of(e.kind());
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return PV_ERR_RUNTIME;
  }
}

}  // namespace

struct pv_model {
  pv::ModelParams params;
};

extern "C" {

const char* pv_version(void) { return "1.0.0"; }

const char* pv_error_message(void) { return g_last_error.c_str(); }

pv_status pv_run(const char* command, const char* request_json) {
  return guarded([&] {
    if (!command) pv::fail(pv::ErrKind::Config, "pv_run: command is null");
    nlohmann::json request = nlohmann::json::object();
    if (request_json && *request_json) {
      request = nlohmann::json::parse(request_json, nullptr, false);
      if (request.is_discarded())
        pv::fail(pv::ErrKind::Config, "pv_run: request is not valid JSON");
    }
    pv::run_command(command, request);
  });
}

pv_status pv_model_load(const char* path, pv_model** out) {
  return guarded([&] {
    if (!path || !out) pv::fail(pv::ErrKind::Config, "pv_model_load: null argument");
    std::vector<unsigned char> extra;  // trainer state, if any, is ignored
    *out = new pv_model{pv::load_model(path, &extra)};
  });
}

void pv_model_free(pv_model* model) { delete model; }

pv_status pv_model_info(const pv_model* model, char* buf, size_t buflen) {
  return guarded([&] {
    if (!model || !buf || buflen == 0)
      pv::fail(pv::ErrKind::Config, "pv_model_info: null argument");
    const pv::ModelParams& p = model->params;
    nlohmann::json info = {{"patch_side", p.patch_side},
                           {"n_content", p.layout.n_content},
                           {"k", p.layout.k},
                           {"enc_hidden", p.enc_hidden},
                           {"dec_hidden", p.dec_hidden}};
    std::string s = info.dump();
    std::strncpy(buf, s.c_str(), buflen - 1);
    buf[buflen - 1] = '\0';
  });
}

}  // extern "C"
