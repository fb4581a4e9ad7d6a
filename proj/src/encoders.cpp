#include "chrep/encoders.hpp"

#include "chrep/error.hpp"
#include "chrep/rng.hpp"
#include "chrep/warnings.hpp"

#include <bit>
#include <cmath>

namespace chrep {

void EncoderConfig::validate() const {
    if (d_img < 1 || d_hidden < 1 || d_embed < 1 || d_proj < 1 || g < 1) {
        throw ConfigError("encoder: all dimensions must be >= 1");
    }
    if (depth < 1) throw ConfigError("encoder: depth must be >= 1");
    if (!(tau_init > 0.0)) throw ConfigError("encoder: tau_init must be positive");
}

void to_json(nlohmann::json& j, const EncoderConfig& c) {
    j = nlohmann::json{{"d_img", c.d_img}, {"d_hidden", c.d_hidden}, {"d_embed", c.d_embed}, {"d_proj", c.d_proj},
                       {"g", c.g},         {"depth", c.depth},       {"seed", c.seed},       {"tau_init", c.tau_init}};
}

void from_json(const nlohmann::json& j, EncoderConfig& c) {
    c.d_img = j.value("d_img", c.d_img);
    c.d_hidden = j.value("d_hidden", c.d_hidden);
    c.d_embed = j.value("d_embed", c.d_embed);
    c.d_proj = j.value("d_proj", c.d_proj);
    c.g = j.value("g", c.g);
    c.depth = j.value("depth", c.depth);
    c.seed = j.value("seed", c.seed);
    c.tau_init = j.value("tau_init", c.tau_init);
}

Linear make_linear(std::size_t in, std::size_t out, bool bias, Rng& rng) {
    Linear l;
    l.w = Tensor2(in, out);
    const double sd = std::sqrt(2.0 / static_cast<double>(in));
    for (auto& v : l.w.data()) v = rng.normal(0.0, sd);
    l.has_bias = bias;
    if (bias) l.b = Tensor2(1, out);
    return l;
}

Mlp make_mlp(std::size_t in, std::size_t hidden, std::size_t out, std::size_t depth, Rng& rng) {
    if (depth < 1) throw ConfigError("make_mlp: depth must be >= 1");
    Mlp m;
    std::size_t d = in;
    for (std::size_t i = 0; i + 1 < depth; ++i) {
        m.layers.push_back(make_linear(d, hidden, true, rng));
        d = hidden;
    }
    m.layers.push_back(make_linear(d, out, true, rng));
    return m;
}

ModelParams ModelParams::init(const EncoderConfig& config) {
    config.validate();
    ModelParams p;
    p.config = config;
    auto stream = [&](const char* name) { return Rng(derive_seed(config.seed, name)); };
    {
        auto r = stream("init/image");
        p.image = make_mlp(config.d_img, config.d_hidden, config.d_embed, config.depth, r);
    }
    {
        auto r = stream("init/coord");
        p.coord = make_mlp(2, config.d_hidden, config.d_embed, config.depth, r);
    }
    {
        auto r = stream("init/gene");
        p.gene = make_mlp(config.g, config.d_hidden, config.d_embed, config.depth, r);
    }
    {
        auto r = stream("init/head");
        p.head = make_linear(config.d_embed, config.g, true, r);
    }
    {
        auto r = stream("init/fuse");
        p.fuse = make_linear(2 * config.d_embed, config.d_embed, true, r);
    }
    {
        auto r = stream("init/proj_m");
        p.proj_m = make_linear(config.d_embed, config.d_proj, false, r);
    }
    {
        auto r = stream("init/proj_g");
        p.proj_g = make_linear(config.d_embed, config.d_proj, false, r);
    }
    p.log_tau = std::log(config.tau_init);
    return p;
}

namespace {

// Visits (name, tensor) for every weight in the canonical order.
template <typename P, typename F>
void visit(P& p, F&& f) {
    auto lin = [&](const std::string& name, auto& l) {
        f(name + ".w", l.w);
        if (l.has_bias) f(name + ".b", l.b);
    };
    auto mlp = [&](const std::string& name, auto& m) {
        for (std::size_t i = 0; i < m.layers.size(); ++i) lin(name + "." + std::to_string(i), m.layers[i]);
    };
    mlp("image", p.image);
    mlp("coord", p.coord);
    mlp("gene", p.gene);
    lin("head", p.head);
    lin("fuse", p.fuse);
    lin("proj_m", p.proj_m);
    lin("proj_g", p.proj_g);
}

} // namespace

std::vector<NamedTensor> ModelParams::named() const {
    std::vector<NamedTensor> out;
    visit(*this, [&](const std::string& name, const Tensor2& t) { out.push_back({name, t}); });
    out.push_back({"log_tau", Tensor2::scalar(log_tau)});
    return out;
}

void ModelParams::assign(std::span<const Tensor2> values) {
    std::size_t i = 0;
    visit(*this, [&](const std::string& name, Tensor2& t) {
        if (i >= values.size() || !values[i].same_shape(t)) throw ShapeError("ModelParams::assign: bad tensor for " + name);
        t = values[i++];
    });
    if (i + 1 != values.size() || values[i].size() != 1) throw ShapeError("ModelParams::assign: bad log_tau");
    log_tau = values[i][0];
}

std::size_t ModelParams::n_params() const {
    std::size_t n = 0;
    for (const auto& t : named()) n += t.value.size();
    return n;
}

std::uint64_t ModelParams::checksum() const {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    auto mix = [&](std::uint64_t x) {
        for (int b = 0; b < 8; ++b) {
            h ^= (x >> (8 * b)) & 0xFF;
            h *= 0x100000001B3ULL;
        }
    };
    for (const auto& t : named()) {
        mix(t.value.rows());
        mix(t.value.cols());
        for (double v : t.value.data()) mix(std::bit_cast<std::uint64_t>(v));
    }
    return h;
}

TensorArchive ModelParams::to_archive() const {
    TensorArchive a;
    a.header["kind"] = "chrep.model";
    a.header["version"] = 1;
    a.header["encoder_config"] = config;
    a.tensors = named();
    return a;
}

ModelParams ModelParams::from_archive(const TensorArchive& archive) {
    if (!archive.header.contains("version")) throw InvalidInput("model checkpoint: missing version field");
    if (archive.header.value("kind", std::string()) != "chrep.model") throw InvalidInput("model checkpoint: wrong kind");
    if (archive.header["version"].get<int>() != 1) throw InvalidInput("model checkpoint: unsupported version");
    ModelParams p = init(archive.header.at("encoder_config").get<EncoderConfig>());
    const auto layout = p.named();
    if (layout.size() != archive.tensors.size()) throw InvalidInput("model checkpoint: tensor count mismatch");
    std::vector<Tensor2> values;
    for (std::size_t i = 0; i < layout.size(); ++i) {
        if (archive.tensors[i].name != layout[i].name) {
            throw InvalidInput("model checkpoint: expected '" + layout[i].name + "', found '" + archive.tensors[i].name + "'");
        }
        values.push_back(archive.tensors[i].value);
    }
    p.assign(values);
    return p;
}

std::vector<ad::Var> ModelVars::all() const {
    std::vector<ad::Var> out;
    auto lin = [&](const LinearVars& l) {
        out.push_back(l.w);
        if (l.has_bias) out.push_back(l.b);
    };
    for (const auto* m : {&image, &coord, &gene})
        for (const auto& l : m->layers) lin(l);
    lin(head);
    lin(fuse);
    lin(proj_m);
    lin(proj_g);
    out.push_back(log_tau);
    return out;
}

ModelVars bind_model(const ModelParams& layout, std::span<const ad::Var> leaves) {
    std::size_t i = 0;
    auto next = [&]() {
        if (i >= leaves.size()) throw ShapeError("bind_model: too few leaves");
        return leaves[i++];
    };
    auto lin = [&](const Linear& l) {
        LinearVars v;
        v.has_bias = l.has_bias;
        v.w = next();
        if (!v.w.value().same_shape(l.w)) throw ShapeError("bind_model: weight shape mismatch");
        if (l.has_bias) v.b = next();
        return v;
    };
    auto mlp = [&](const Mlp& m) {
        MlpVars v;
        for (const auto& l : m.layers) v.layers.push_back(lin(l));
        return v;
    };
    ModelVars mv;
    mv.image = mlp(layout.image);
    mv.coord = mlp(layout.coord);
    mv.gene = mlp(layout.gene);
    mv.head = lin(layout.head);
    mv.fuse = lin(layout.fuse);
    mv.proj_m = lin(layout.proj_m);
    mv.proj_g = lin(layout.proj_g);
    mv.log_tau = next();
    if (i != leaves.size()) throw ShapeError("bind_model: too many leaves");
    return mv;
}

ModelVars bind_model(ad::Graph& g, const ModelParams& params, bool trainable) {
    std::vector<ad::Var> leaves;
    for (auto& t : params.named()) leaves.push_back(trainable ? g.param(std::move(t.value)) : g.constant(std::move(t.value)));
    return bind_model(params, leaves);
}

ad::Var linear(ad::Var x, const LinearVars& layer) {
    ad::Var y = ad::matmul(x, layer.w);
    return layer.has_bias ? ad::add(y, layer.b) : y;
}

ad::Var mlp_forward(ad::Var x, const MlpVars& mlp) {
    for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
        x = linear(x, mlp.layers[i]);
        if (i + 1 < mlp.layers.size()) x = ad::relu(x);
    }
    return x;
}

ad::Var encode_image(ad::Var feats, const ModelVars& m) {
    return mlp_forward(feats, m.image);
}

ad::Var regress(ad::Var f_h, const ModelVars& m) {
    return linear(f_h, m.head);
}

ad::Var encode_coord(ad::Var coords_unit, const ModelVars& m) {
    if (coords_unit.cols() != 2) throw ShapeError("encode_coord: expected B x 2, got " + coords_unit.value().shape_str());
    for (double v : coords_unit.value().data()) {
        if (v < -0.5 || v > 1.5) {
            warn("encode_coord: coordinate " + std::to_string(v) + " outside [-0.5, 1.5]; expected per-slide unit scaling");
            break;
        }
    }
    return mlp_forward(coords_unit, m.coord);
}

ad::Var fuse(ad::Var f_h, ad::Var f_c, const ModelVars& m) {
    return linear(ad::concat_cols(f_h, f_c), m.fuse);
}

ad::Var encode_gene(ad::Var g_std, const ModelVars& m) {
    return mlp_forward(g_std, m.gene);
}

ad::Var project(ad::Var f, const LinearVars& head) {
    return ad::row_l2_normalize(linear(f, head));
}

ad::Var temperature(const ModelVars& m) {
    return ad::exp(m.log_tau);
}

Tensor2 mlp_forward(const Tensor2& x, const Mlp& mlp) {
    Tensor2 h = x;
    for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
        const Linear& l = mlp.layers[i];
        Tensor2 y = matmul(h, l.w);
        if (l.has_bias)
            for (std::size_t r = 0; r < y.rows(); ++r)
                for (std::size_t c = 0; c < y.cols(); ++c) y(r, c) += l.b(0, c);
        if (i + 1 < mlp.layers.size())
            for (auto& v : y.data()) v = v > 0.0 ? v : 0.0;
        h = std::move(y);
    }
    return h;
}

Tensor2 encode_image(const Tensor2& feats, const ModelParams& p) {
    if (feats.cols() != p.config.d_img) {
        throw ShapeError("encode_image: features have " + std::to_string(feats.cols()) + " columns, model expects " +
                         std::to_string(p.config.d_img));
    }
    return mlp_forward(feats, p.image);
}

Tensor2 regress(const Tensor2& f_h, const ModelParams& p) {
    Mlp head;
    head.layers.push_back(p.head);
    return mlp_forward(f_h, head);
}

} // namespace chrep
