#include "vae.hpp"

#include <cmath>

#include "binio.hpp"
#include "rng.hpp"

namespace pv {

namespace {

constexpr char kMagic[4] = {'P', 'V', 'A', 'E'};
constexpr std::uint32_t kVersion = 1;
constexpr double kLogvarClamp = 10.0;

Array glorot(RngStream& rng, std::size_t in, std::size_t out) {
  double bound = std::sqrt(6.0 / static_cast<double>(in + out));
  Array w = Array::zeros({in, out});
  for (double& v : w.data) v = rng.uniform(-bound, bound);
  return w;
}

// x (B x in) -> tanh-hidden MLP -> linear output (B x out)
NodePtr mlp_forward(const std::vector<NodePtr>& ws, const std::vector<NodePtr>& bs,
                    const NodePtr& x) {
  NodePtr h = x;
  for (std::size_t l = 0; l < ws.size(); ++l) {
    h = affine(h, ws[l], bs[l]);
    if (l + 1 < ws.size()) h = tanh(h);
  }
  return h;
}

// s x s lattice of (row, col) coordinates scaled to [-1, 1]^2
Array base_grid(int s) {
  Array g = Array::zeros({static_cast<std::size_t>(s) * s, 2});
  for (int r = 0; r < s; ++r)
    for (int c = 0; c < s; ++c) {
      std::size_t i = static_cast<std::size_t>(r * s + c);
      g.at(i, 0) = s == 1 ? 0.0 : -1.0 + 2.0 * r / (s - 1);
      g.at(i, 1) = s == 1 ? 0.0 : -1.0 + 2.0 * c / (s - 1);
    }
  return g;
}

}  // namespace

ModelParams ModelParams::init(const LatentLayout& layout, int patch_side,
                              std::vector<int> enc_hidden, std::vector<int> dec_hidden,
                              ReconKind recon, std::uint64_t seed) {
  if (layout.n_content < 1) fail(ErrKind::Config, "ModelParams: n_content must be >= 1");
  if (!(layout.k > 0.0 && layout.k <= 1.0))
    fail(ErrKind::Config, "ModelParams: shift scale k must be in (0, 1]");
  if (patch_side < 3) fail(ErrKind::Config, "ModelParams: patch_side must be >= 3");
  ModelParams p;
  p.layout = layout;
  p.patch_side = patch_side;
  p.recon = recon;
  p.enc_hidden = std::move(enc_hidden);
  p.dec_hidden = std::move(dec_hidden);
  RngStream rng(mix_key(seed, 0x6d6f64656cULL));
  auto build = [&rng](std::vector<Array>& ws, std::vector<Array>& bs, int in,
                      const std::vector<int>& hidden, int out) {
    std::vector<int> dims;
    dims.push_back(in);
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(out);
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      ws.push_back(glorot(rng, static_cast<std::size_t>(dims[l]),
                          static_cast<std::size_t>(dims[l + 1])));
      bs.push_back(Array::zeros({1, static_cast<std::size_t>(dims[l + 1])}));
    }
  };
  build(p.enc_w, p.enc_b, p.input_dim(), p.enc_hidden, p.enc_out_dim());
  build(p.dec_w, p.dec_b, p.dec_in_dim(), p.dec_hidden, 1);
  return p;
}

ParamNodes ParamNodes::leaves(const ModelParams& p) {
  ParamNodes n;
  for (const auto& a : p.enc_w) n.enc_w.push_back(leaf(a));
  for (const auto& a : p.enc_b) n.enc_b.push_back(leaf(a));
  for (const auto& a : p.dec_w) n.dec_w.push_back(leaf(a));
  for (const auto& a : p.dec_b) n.dec_b.push_back(leaf(a));
  return n;
}

ParamNodes ParamNodes::constants(const ModelParams& p) {
  ParamNodes n;
  for (const auto& a : p.enc_w) n.enc_w.push_back(constant(a));
  for (const auto& a : p.enc_b) n.enc_b.push_back(constant(a));
  for (const auto& a : p.dec_w) n.dec_w.push_back(constant(a));
  for (const auto& a : p.dec_b) n.dec_b.push_back(constant(a));
  return n;
}

std::vector<NodePtr> ParamNodes::all() const {
  std::vector<NodePtr> out;
  for (const auto* group : {&enc_w, &enc_b, &dec_w, &dec_b})
    out.insert(out.end(), group->begin(), group->end());
  return out;
}

EncodedBatch encode_batch(const ParamNodes& pn, const ModelParams& meta,
                          const NodePtr& X) {
  if (X->value.ndim() != 2 ||
      X->value.shape[1] != static_cast<std::size_t>(meta.input_dim()))
    fail(ErrKind::Shape,
         "encode: patch batch must be (B x " + std::to_string(meta.input_dim()) +
             "), got " + Array::shape_str(X->value.shape));
  NodePtr out = mlp_forward(pn.enc_w, pn.enc_b, X);
  std::size_t d = static_cast<std::size_t>(meta.layout.latent_dim());
  EncodedBatch code;
  code.mu = slice2d(out, 0, out->value.shape[0], 0, d);
  code.logvar =
      clamp_smooth(slice2d(out, 0, out->value.shape[0], d, 2 * d), -kLogvarClamp,
                   kLogvarClamp);
  return code;
}

LatentCode encode(const ModelParams& p, const Array& patch) {
  if (patch.size() != static_cast<std::size_t>(p.input_dim()))
    fail(ErrKind::Shape, "encode: patch length " + std::to_string(patch.size()) +
                             " != " + std::to_string(p.input_dim()));
  NodePtr X = constant(Array({1, patch.size()}, patch.data));
  EncodedBatch code = encode_batch(ParamNodes::constants(p), p, X);
  return LatentCode{Array({code.mu->value.size()}, code.mu->value.data),
                    Array({code.logvar->value.size()}, code.logvar->value.data)};
}

NodePtr reparameterize(const EncodedBatch& code, const Array& eps) {
  if (code.mu->value.size() != eps.size())
    fail(ErrKind::Shape, "reparameterize: eps length " + std::to_string(eps.size()) +
                             " != latent size " + std::to_string(code.mu->value.size()));
  NodePtr sigma = exp(mul_scalar(code.logvar, 0.5));
  Array e = eps;
  e.shape = code.mu->value.shape;
  return add(code.mu, mul(sigma, constant(std::move(e))));
}

NodePtr decode_batch(const ParamNodes& pn, const ModelParams& meta, const NodePtr& z) {
  std::size_t d = static_cast<std::size_t>(meta.layout.latent_dim());
  if (z->value.ndim() != 2 || z->value.shape[1] != d)
    fail(ErrKind::Shape, "decode: z must be (B x " + std::to_string(d) + "), got " +
                             Array::shape_str(z->value.shape));
  std::size_t B = z->value.shape[0];
  int s = meta.patch_side;
  std::size_t npix = static_cast<std::size_t>(s) * s;

  NodePtr grid = constant(base_grid(s));                       // (s^2 x 2)
  NodePtr shift = mul_scalar(slice2d(z, 0, B, 0, 2), meta.layout.k);  // (B x 2)
  NodePtr content = slice2d(z, 0, B, 2, d);                    // (B x n)
  NodePtr coords = add(tile_rows(grid, B), repeat_rows(shift, npix));
  NodePtr dec_in = concat_cols({coords, repeat_rows(content, npix)});
  NodePtr pix = sigmoid(mlp_forward(pn.dec_w, pn.dec_b, dec_in));  // (B*s^2 x 1)
  return reshape(pix, {B, npix});
}

Array decode(const ModelParams& p, const Array& z) {
  NodePtr zn = constant(Array({1, z.size()}, z.data));
  NodePtr out = decode_batch(ParamNodes::constants(p), p, zn);
  std::size_t s = static_cast<std::size_t>(p.patch_side);
  return Array({s, s}, out->value.data);
}

Array decode_on_grid(const ModelParams& p, const Array& content, const Array& coords) {
  if (coords.ndim() != 2 || coords.shape[1] != 2)
    fail(ErrKind::Shape, "decode_on_grid: coords must be (N x 2)");
  if (content.size() != static_cast<std::size_t>(p.layout.n_content))
    fail(ErrKind::Shape, "decode_on_grid: content latent length mismatch");
  std::size_t N = coords.shape[0];
  Array c({1, content.size()}, content.data);
  ParamNodes pn = ParamNodes::constants(p);
  NodePtr dec_in = concat_cols({constant(coords), repeat_rows(constant(c), N)});
  NodePtr pix = sigmoid(mlp_forward(pn.dec_w, pn.dec_b, dec_in));
  return Array({N}, pix->value.data);
}

NodePtr gaussian_kl(const NodePtr& mu, const NodePtr& logvar) {
  std::size_t B = mu->value.shape[0];
  NodePtr terms = sub(add(square(mu), exp(logvar)), add_scalar(logvar, 1.0));
  return mul_scalar(sum(terms), 0.5 / static_cast<double>(B));
}

ElboParts elbo_loss(const ParamNodes& pn, const ModelParams& meta, const Array& batch,
                    const Array& eps, double beta) {
  if (beta < 0.0) fail(ErrKind::Config, "elbo_loss: beta must be >= 0");
  std::size_t B = batch.shape.size() == 2 ? batch.shape[0] : 0;
  if (B == 0) fail(ErrKind::Shape, "elbo_loss: batch must be 2D");
  ElboParts parts;
  NodePtr X = constant(batch);
  parts.code = encode_batch(pn, meta, X);
  NodePtr z = reparameterize(parts.code, eps);
  parts.x_hat = decode_batch(pn, meta, z);

  double inv_b = 1.0 / static_cast<double>(B);
  if (meta.recon == ReconKind::Bernoulli) {
    NodePtr xh = clamp_smooth(parts.x_hat, 1e-6, 1.0 - 1e-6);
    NodePtr nll = neg(add(mul(X, log(xh)), mul(rsub_scalar(1.0, X), log(rsub_scalar(1.0, xh)))));
    parts.recon = mul_scalar(sum(nll), inv_b);
  } else {
    parts.recon = mul_scalar(sum(square(sub(X, parts.x_hat))), inv_b);
  }
  parts.kl = gaussian_kl(parts.code.mu, parts.code.logvar);
  parts.total = add(parts.recon, mul_scalar(parts.kl, beta));
  return parts;
}

Array decode_manifold(const ModelParams& p, double lo, double hi, int m) {
  if (p.layout.n_content != 2)
    fail(ErrKind::Config, "decode_manifold: requires n_content == 2, have " +
                              std::to_string(p.layout.n_content));
  if (m < 1) fail(ErrKind::Config, "decode_manifold: m must be >= 1");
  int s = p.patch_side;
  std::size_t side = static_cast<std::size_t>(m) * s;
  Array out = Array::zeros({side, side});
  for (int ti = 0; ti < m; ++ti)
    for (int tj = 0; tj < m; ++tj) {
      double z1 = m == 1 ? lo : lo + (hi - lo) * ti / (m - 1);
      double z2 = m == 1 ? lo : lo + (hi - lo) * tj / (m - 1);
      Array z({4}, {0.0, 0.0, z1, z2});
      Array patch = decode(p, z);
      for (int r = 0; r < s; ++r)
        for (int c = 0; c < s; ++c)
          out.at(static_cast<std::size_t>(ti * s + r),
                 static_cast<std::size_t>(tj * s + c)) = patch.at(r, c);
    }
  return out;
}

void save_model(const std::string& path, const ModelParams& p,
                const std::vector<unsigned char>* extra) {
  binio::atomic_write(path, [&](std::ostream& os) {
    os.write(kMagic, 4);
    binio::put_u32(os, kVersion);
    binio::put_u32(os, static_cast<std::uint32_t>(p.layout.n_content));
    binio::put_f64(os, p.layout.k);
    binio::put_u32(os, static_cast<std::uint32_t>(p.patch_side));
    binio::put_u32(os, p.recon == ReconKind::Bernoulli ? 0u : 1u);
    auto put_dims = [&os](const std::vector<int>& dims) {
      binio::put_u32(os, static_cast<std::uint32_t>(dims.size()));
      for (int d : dims) binio::put_u32(os, static_cast<std::uint32_t>(d));
    };
    put_dims(p.enc_hidden);
    put_dims(p.dec_hidden);
    for (const auto* group : {&p.enc_w, &p.enc_b, &p.dec_w, &p.dec_b}) {
      binio::put_u32(os, static_cast<std::uint32_t>(group->size()));
      for (const auto& a : *group) binio::put_array(os, a);
    }
    binio::put_u64(os, extra ? extra->size() : 0);
    if (extra && !extra->empty())
      os.write(reinterpret_cast<const char*>(extra->data()),
               static_cast<std::streamsize>(extra->size()));
  });
}

ModelParams load_model(const std::string& path, std::vector<unsigned char>* extra) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrKind::Io, "cannot open " + path);
  binio::Reader r(is, path);
  r.expect_magic(kMagic);
  std::uint32_t version = r.u32();
  if (version != kVersion)
    fail(ErrKind::Format, path + ": unsupported checkpoint version " +
                              std::to_string(version));
  ModelParams p;
  p.layout.n_content = static_cast<int>(r.u32());
  p.layout.k = r.f64();
  p.patch_side = static_cast<int>(r.u32());
  p.recon = r.u32() == 0 ? ReconKind::Bernoulli : ReconKind::Mse;
  auto get_dims = [&r] {
    std::uint32_t n = r.u32();
    std::vector<int> dims(n);
    for (auto& d : dims) d = static_cast<int>(r.u32());
    return dims;
  };
  p.enc_hidden = get_dims();
  p.dec_hidden = get_dims();
  for (auto* group : {&p.enc_w, &p.enc_b, &p.dec_w, &p.dec_b}) {
    std::uint32_t n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) group->push_back(binio::get_array(r));
  }
  std::uint64_t extra_len = r.u64();
  if (extra) {
    extra->resize(extra_len);
    if (extra_len) r.raw(extra->data(), extra_len);
  } else if (extra_len) {
    fail(ErrKind::Format, path + ": checkpoint carries trainer state; load it as one");
  }
  return p;
}

}  // namespace pv
