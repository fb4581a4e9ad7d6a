#include "chrep/cohort.hpp"

#include "chrep/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

namespace chrep {

namespace fs = std::filesystem;

std::size_t Cohort::d_img() const {
    for (const auto& [id, spots] : slides)
        if (!spots.empty()) return spots.front().feat.size();
    return 0;
}

std::size_t Cohort::total_spots() const {
    std::size_t n = 0;
    for (const auto& [id, spots] : slides) n += spots.size();
    return n;
}

std::vector<std::string> Cohort::slide_ids() const {
    std::vector<std::string> ids;
    ids.reserve(slides.size());
    for (const auto& [id, spots] : slides) ids.push_back(id);
    return ids;
}

const std::vector<SpotRecord>& Cohort::slide(const std::string& id) const {
    auto it = slides.find(id);
    if (it == slides.end()) throw InvalidFold("unknown slide '" + id + "'");
    return it->second;
}

void Cohort::validate() const {
    const std::size_t g_all = gene_names.size();
    const std::size_t d = d_img();
    std::set<std::size_t> seen_hvg;
    for (std::size_t j : hvg_index) {
        if (j >= g_all) throw InvalidInput("hvg_index entry " + std::to_string(j) + " out of range");
        if (!seen_hvg.insert(j).second) throw InvalidInput("duplicate hvg_index entry " + std::to_string(j));
    }
    for (const auto& [id, spots] : slides) {
        if (spots.empty()) throw InvalidInput("slide '" + id + "' has no spots");
        std::set<std::string> ids;
        for (const auto& s : spots) {
            if (s.slide_id != id) throw InvalidInput("spot " + s.spot_id + " filed under wrong slide " + id);
            if (!ids.insert(s.spot_id).second) throw InvalidInput("duplicate spot " + id + "/" + s.spot_id);
            if (s.feat.size() != d) throw InvalidInput("spot " + id + "/" + s.spot_id + ": feature length mismatch");
            if (s.expr_raw.size() != g_all) {
                throw InvalidInput("spot " + id + "/" + s.spot_id + ": expression length mismatch");
            }
            for (double v : s.expr_raw)
                if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidInput("spot " + id + "/" + s.spot_id + ": negative count");
        }
    }
}

std::vector<double> lognorm(std::span<const double> expr_raw, double scale) {
    if (!(scale > 0.0)) throw ConfigError("lognorm: scale must be positive");
    double total = 0.0;
    for (double v : expr_raw) {
        if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidInput("lognorm: counts must be finite and nonnegative");
        total += v;
    }
    const double denom = std::max(total, kLibraryEps);
    std::vector<double> out(expr_raw.size());
    for (std::size_t j = 0; j < expr_raw.size(); ++j) out[j] = std::log1p(scale * expr_raw[j] / denom);
    return out;
}

std::vector<std::size_t> top_variance_genes(std::span<const double> variances, std::size_t n_hvg) {
    if (n_hvg < 1 || n_hvg > variances.size()) {
        throw ConfigError("select_hvg: requested " + std::to_string(n_hvg) + " genes out of " +
                          std::to_string(variances.size()));
    }
    std::vector<std::size_t> order(variances.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return variances[a] > variances[b]; });
    order.resize(n_hvg);
    std::sort(order.begin(), order.end());
    return order;
}

std::vector<std::size_t> select_hvg(Cohort& cohort, std::size_t n_hvg, double scale) {
    const std::size_t g_all = cohort.n_genes();
    if (n_hvg < 1 || n_hvg > g_all) {
        throw ConfigError("select_hvg: requested " + std::to_string(n_hvg) + " genes out of " + std::to_string(g_all));
    }
    // Welford accumulation per gene.
    std::vector<double> mean(g_all, 0.0), m2(g_all, 0.0);
    double n = 0.0;
    for (const auto& [id, spots] : cohort.slides) {
        for (const auto& s : spots) {
            const auto x = lognorm(s.expr_raw, scale);
            n += 1.0;
            for (std::size_t j = 0; j < g_all; ++j) {
                const double d = x[j] - mean[j];
                mean[j] += d / n;
                m2[j] += d * (x[j] - mean[j]);
            }
        }
    }
    std::vector<double> var(g_all, 0.0);
    if (n > 0.0)
        for (std::size_t j = 0; j < g_all; ++j) var[j] = m2[j] / n;
    cohort.hvg_index = top_variance_genes(var, n_hvg);
    return cohort.hvg_index;
}

std::vector<double> Standardizer::apply(std::span<const double> g) const {
    if (g.size() != mu.size()) {
        throw ShapeError("standardize: length " + std::to_string(g.size()) + ", expected " + std::to_string(mu.size()));
    }
    std::vector<double> out(g.size());
    for (std::size_t j = 0; j < g.size(); ++j) out[j] = (g[j] - mu[j]) / (sigma[j] + epsilon);
    return out;
}

std::vector<double> Standardizer::invert(std::span<const double> z) const {
    if (z.size() != mu.size()) {
        throw ShapeError("invert: length " + std::to_string(z.size()) + ", expected " + std::to_string(mu.size()));
    }
    std::vector<double> out(z.size());
    for (std::size_t j = 0; j < z.size(); ++j) out[j] = z[j] * (sigma[j] + epsilon) + mu[j];
    return out;
}

Tensor2 Standardizer::apply(const Tensor2& g) const {
    if (g.cols() != mu.size()) throw ShapeError("standardize: matrix has " + std::to_string(g.cols()) + " columns");
    Tensor2 out(g.rows(), g.cols());
    for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t j = 0; j < g.cols(); ++j) out(r, j) = (g(r, j) - mu[j]) / (sigma[j] + epsilon);
    return out;
}

Tensor2 Standardizer::invert(const Tensor2& z) const {
    if (z.cols() != mu.size()) throw ShapeError("invert: matrix has " + std::to_string(z.cols()) + " columns");
    Tensor2 out(z.rows(), z.cols());
    for (std::size_t r = 0; r < z.rows(); ++r)
        for (std::size_t j = 0; j < z.cols(); ++j) out(r, j) = z(r, j) * (sigma[j] + epsilon) + mu[j];
    return out;
}

std::vector<double> standardize(std::span<const double> g, const Standardizer& s) {
    return s.apply(g);
}

Standardizer fit_standardizer(std::span<const Tensor2> expr_log) {
    std::size_t g = 0, n = 0;
    for (const auto& m : expr_log) {
        if (m.rows() == 0) continue;
        if (g == 0) g = m.cols();
        if (m.cols() != g) throw ShapeError("fit_standardizer: gene counts differ between slides");
        n += m.rows();
    }
    if (n == 0) throw InvalidFold("fit_standardizer: empty training set");
    Standardizer s;
    s.mu.assign(g, 0.0);
    s.sigma.assign(g, 0.0);
    for (const auto& m : expr_log)
        for (std::size_t r = 0; r < m.rows(); ++r)
            for (std::size_t j = 0; j < g; ++j) s.mu[j] += m(r, j);
    for (auto& v : s.mu) v /= static_cast<double>(n);
    for (const auto& m : expr_log)
        for (std::size_t r = 0; r < m.rows(); ++r)
            for (std::size_t j = 0; j < g; ++j) {
                const double d = m(r, j) - s.mu[j];
                s.sigma[j] += d * d;
            }
    for (auto& v : s.sigma) v = std::sqrt(v / static_cast<double>(n));
    return s;
}

Standardizer fit_standardizer(const Cohort& cohort, std::span<const std::string> train_slides, double scale) {
    if (train_slides.empty()) throw InvalidFold("fit_standardizer: empty training set");
    std::vector<Tensor2> mats;
    mats.reserve(train_slides.size());
    for (const auto& id : train_slides) {
        if (cohort.slide(id).empty()) throw InvalidFold("fit_standardizer: slide '" + id + "' is empty");
        mats.push_back(slide_data(cohort, id, scale).expr_log);
    }
    return fit_standardizer(mats);
}

std::vector<LosoFold> make_folds(const Cohort& cohort, double scale) {
    const auto ids = cohort.slide_ids();
    if (ids.size() < 2) throw ConfigError("make_folds: need at least 2 slides, have " + std::to_string(ids.size()));
    std::map<std::string, Tensor2> expr;
    for (const auto& id : ids) expr.emplace(id, slide_data(cohort, id, scale).expr_log);
    std::vector<LosoFold> folds;
    for (const auto& test : ids) {
        LosoFold f;
        f.test_slide = test;
        std::vector<Tensor2> mats;
        for (const auto& id : ids) {
            if (id == test) continue;
            f.train_slides.push_back(id);
            mats.push_back(expr.at(id));
        }
        f.standardizer = fit_standardizer(mats);
        folds.push_back(std::move(f));
    }
    return folds;
}

Tensor2 unit_coords(const Tensor2& coords) {
    Tensor2 out(coords.rows(), coords.cols());
    for (std::size_t c = 0; c < coords.cols(); ++c) {
        double lo = INFINITY, hi = -INFINITY;
        for (std::size_t r = 0; r < coords.rows(); ++r) {
            lo = std::min(lo, coords(r, c));
            hi = std::max(hi, coords(r, c));
        }
        const double span = hi - lo;
        for (std::size_t r = 0; r < coords.rows(); ++r) out(r, c) = span > 0.0 ? (coords(r, c) - lo) / span : 0.5;
    }
    return out;
}

SlideData slide_data(const Cohort& cohort, const std::string& slide_id, double scale) {
    const auto& spots = cohort.slide(slide_id);
    if (cohort.hvg_index.empty()) throw ConfigError("slide_data: cohort has no HVG selection");
    const std::size_t n = spots.size(), d = cohort.d_img(), g = cohort.n_hvg();
    SlideData sd;
    sd.slide_id = slide_id;
    sd.feats = Tensor2(n, d);
    sd.coords = Tensor2(n, 2);
    sd.expr_log = Tensor2(n, g);
    sd.spot_ids.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& s = spots[i];
        sd.spot_ids.push_back(s.spot_id);
        if (s.feat.size() != d) throw InvalidInput("slide_data: feature length mismatch at " + s.spot_id);
        std::copy(s.feat.begin(), s.feat.end(), sd.feats.row(i).begin());
        sd.coords(i, 0) = s.coord[0];
        sd.coords(i, 1) = s.coord[1];
        const auto ln = lognorm(s.expr_raw, scale);
        for (std::size_t j = 0; j < g; ++j) sd.expr_log(i, j) = ln[cohort.hvg_index[j]];
    }
    sd.coords_unit = unit_coords(sd.coords);
    return sd;
}

std::vector<PreparedSlide> prepare_slides(const Cohort& cohort, std::span<const std::string> slide_ids,
                                          const Standardizer& standardizer, double scale) {
    std::vector<PreparedSlide> out;
    out.reserve(slide_ids.size());
    for (const auto& id : slide_ids) {
        PreparedSlide p;
        p.data = slide_data(cohort, id, scale);
        p.g_std = standardizer.apply(p.data.expr_log);
        out.push_back(std::move(p));
    }
    return out;
}

// ---------------------------------------------------------------------------
// CSV and directory I/O

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string::npos) end = text.size();
        std::string_view line(text.data() + pos, end - pos);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        pos = end + 1;
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::size_t start = 0;
        while (true) {
            const std::size_t comma = line.find(',', start);
            if (comma == std::string_view::npos) {
                fields.emplace_back(line.substr(start));
                break;
            }
            fields.emplace_back(line.substr(start, comma - start));
            start = comma + 1;
        }
        rows.push_back(std::move(fields));
    }
    return rows;
}

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

namespace {

double parse_double(const std::string& s, const fs::path& file) {
    double v = 0.0;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    while (first < last && *first == ' ') ++first;
    if (first < last && *first == '+') ++first;
    auto res = std::from_chars(first, last, v);
    if (res.ec != std::errc() || res.ptr != last) throw InvalidInput(file.string() + ": cannot parse number '" + s + "'");
    return v;
}

// Rows keyed by spot id, values parsed as doubles; header row returned separately.
struct NumericTable {
    std::vector<std::string> header;
    std::vector<std::string> ids;
    std::vector<std::vector<double>> values;
};

NumericTable parse_table(const std::string& text, const fs::path& file, std::size_t expected_cols) {
    auto rows = parse_csv(text);
    if (rows.empty()) throw InvalidInput(file.string() + ": empty file");
    NumericTable t;
    t.header = std::move(rows.front());
    if (t.header.size() != expected_cols + 1) {
        throw InvalidInput(file.string() + ": expected " + std::to_string(expected_cols + 1) + " columns, header has " +
                           std::to_string(t.header.size()));
    }
    for (std::size_t r = 1; r < rows.size(); ++r) {
        auto& row = rows[r];
        if (row.size() != expected_cols + 1) {
            throw InvalidInput(file.string() + ": row " + std::to_string(r) + " has " + std::to_string(row.size()) +
                               " fields");
        }
        std::vector<double> vals(expected_cols);
        for (std::size_t c = 0; c < expected_cols; ++c) vals[c] = parse_double(row[c + 1], file);
        t.ids.push_back(std::move(row[0]));
        t.values.push_back(std::move(vals));
    }
    return t;
}

std::unordered_map<std::string, std::size_t> index_of(const NumericTable& t, const fs::path& file) {
    std::unordered_map<std::string, std::size_t> m;
    for (std::size_t i = 0; i < t.ids.size(); ++i)
        if (!m.emplace(t.ids[i], i).second) throw InvalidInput(file.string() + ": duplicate spot id " + t.ids[i]);
    return m;
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream os(p, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + p.string() + " for writing");
    os << text;
    if (!os) throw IoError("write failed for " + p.string());
}

} // namespace

void AccessLog::set_phase(std::string phase) {
    std::lock_guard lock(mu_);
    phase_ = std::move(phase);
}

void AccessLog::record(const fs::path& path) {
    std::lock_guard lock(mu_);
    entries_.push_back({phase_, path});
}

std::vector<AccessLog::Entry> AccessLog::entries() const {
    std::lock_guard lock(mu_);
    return entries_;
}

CohortStore::CohortStore(fs::path root, AccessLog* log) : root_(std::move(root)), log_(log) {
    const auto text = read_file(root_ / "manifest.json");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
        manifest_.name = j.value("name", std::string("cohort"));
        manifest_.gene_names = j.at("gene_names").get<std::vector<std::string>>();
        manifest_.slides = j.at("slides").get<std::vector<std::string>>();
        manifest_.d_img = j.at("d_img").get<std::size_t>();
        if (j.contains("hvg_index") && !j["hvg_index"].is_null()) {
            manifest_.hvg_index = j["hvg_index"].get<std::vector<std::size_t>>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput((root_ / "manifest.json").string() + ": " + e.what());
    }
    if (manifest_.slides.empty()) throw InvalidInput("manifest lists no slides");
}

std::string CohortStore::read_file(const fs::path& p) const {
    if (log_ != nullptr) log_->record(p);
    std::ifstream is(p, std::ios::binary);
    if (!is) throw IoError("cannot open " + p.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

std::vector<SpotRecord> CohortStore::load_slide(const std::string& slide_id) const {
    if (std::find(manifest_.slides.begin(), manifest_.slides.end(), slide_id) == manifest_.slides.end()) {
        throw InvalidFold("slide '" + slide_id + "' not in manifest");
    }
    const fs::path dir = slide_dir(slide_id);
    const std::size_t g_all = manifest_.gene_names.size();
    const auto expr_path = dir / "expr.csv", coord_path = dir / "coords.csv", feat_path = dir / "feats.csv";
    const auto expr = parse_table(read_file(expr_path), expr_path, g_all);
    const auto coords = parse_table(read_file(coord_path), coord_path, 2);
    const auto feats = parse_table(read_file(feat_path), feat_path, manifest_.d_img);
    for (std::size_t j = 0; j < g_all; ++j) {
        if (expr.header[j + 1] != manifest_.gene_names[j]) {
            throw InvalidInput(expr_path.string() + ": gene column " + std::to_string(j) + " is '" + expr.header[j + 1] +
                               "', manifest says '" + manifest_.gene_names[j] + "'");
        }
    }
    const auto coord_idx = index_of(coords, coord_path);
    const auto feat_idx = index_of(feats, feat_path);
    std::vector<SpotRecord> spots;
    spots.reserve(expr.ids.size());
    for (std::size_t i = 0; i < expr.ids.size(); ++i) {
        SpotRecord s;
        s.slide_id = slide_id;
        s.spot_id = expr.ids[i];
        auto c = coord_idx.find(s.spot_id);
        auto f = feat_idx.find(s.spot_id);
        if (c == coord_idx.end()) throw InvalidInput(coord_path.string() + ": missing spot " + s.spot_id);
        if (f == feat_idx.end()) throw InvalidInput(feat_path.string() + ": missing spot " + s.spot_id);
        s.coord = {coords.values[c->second][0], coords.values[c->second][1]};
        s.feat = feats.values[f->second];
        s.expr_raw = expr.values[i];
        spots.push_back(std::move(s));
    }
    if (spots.empty()) throw InvalidInput("slide '" + slide_id + "' has no spots");
    return spots;
}

Cohort CohortStore::load(std::span<const std::string> slide_ids) const {
    Cohort c;
    c.name = manifest_.name;
    c.gene_names = manifest_.gene_names;
    if (manifest_.hvg_index) {
        c.hvg_index = *manifest_.hvg_index;
        std::sort(c.hvg_index.begin(), c.hvg_index.end());
    }
    for (const auto& id : slide_ids) c.slides.emplace(id, load_slide(id));
    c.validate();
    return c;
}

Cohort CohortStore::load_all() const {
    return load(manifest_.slides);
}

void write_cohort(const Cohort& cohort, const fs::path& dir) {
    cohort.validate();
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

    nlohmann::ordered_json m;
    m["name"] = cohort.name;
    m["gene_names"] = cohort.gene_names;
    m["slides"] = cohort.slide_ids();
    m["d_img"] = cohort.d_img();
    if (!cohort.hvg_index.empty()) m["hvg_index"] = cohort.hvg_index;
    write_text(dir / "manifest.json", m.dump(2) + "\n");

    for (const auto& [id, spots] : cohort.slides) {
        const fs::path sd = dir / id;
        fs::create_directories(sd, ec);
        if (ec) throw IoError("cannot create " + sd.string() + ": " + ec.message());
        std::string expr = "spot_id", coords = "spot_id,x,y\n", feats = "spot_id";
        for (const auto& g : cohort.gene_names) expr += "," + g;
        expr += "\n";
        for (std::size_t f = 0; f < cohort.d_img(); ++f) feats += ",f" + std::to_string(f);
        feats += "\n";
        for (const auto& s : spots) {
            expr += s.spot_id;
            for (double v : s.expr_raw) expr += "," + format_double(v);
            expr += "\n";
            coords += s.spot_id + "," + format_double(s.coord[0]) + "," + format_double(s.coord[1]) + "\n";
            feats += s.spot_id;
            for (double v : s.feat) feats += "," + format_double(v);
            feats += "\n";
        }
        write_text(sd / "expr.csv", expr);
        write_text(sd / "coords.csv", coords);
        write_text(sd / "feats.csv", feats);
    }
}

} // namespace chrep
