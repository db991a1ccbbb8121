#include "agrisr/indices.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>

#include <json.hpp>

namespace agrisr {

using nlohmann::json;

namespace {
constexpr float kNaN = std::numeric_limits<float>::quiet_NaN();
}

LabelRaster LabelRaster::make(int width, int height, std::vector<ClassInfo> classes) {
    if (width <= 0 || height <= 0) raise(ErrorCode::invalid_argument, "non-positive label dims");
    LabelRaster l;
    l.width = width;
    l.height = height;
    l.classes = std::move(classes);
    l.data.assign(static_cast<std::size_t>(width) * height, unlabeled);
    return l;
}

const ClassInfo* LabelRaster::find_class(int id) const {
    for (const auto& c : classes)
        if (c.id == id) return &c;
    return nullptr;
}

void LabelRaster::validate() const {
    if (width <= 0 || height <= 0) raise(ErrorCode::invalid_argument, "non-positive label dims");
    if (data.size() != static_cast<std::size_t>(width) * height)
        raise(ErrorCode::invalid_argument, "label data size mismatch");
    std::set<int> ids;
    for (const auto& c : classes)
        if (!ids.insert(c.id).second)
            raise(ErrorCode::invalid_argument, "duplicate class id");
    for (std::int32_t v : data)
        if (v != unlabeled && !ids.count(v))
            raise(ErrorCode::invalid_argument, "labeled cell uses unknown class id");
}

void write_labels(const LabelRaster& labels, const std::filesystem::path& path) {
    labels.validate();
    json header;
    header["width_px"] = labels.width;
    header["height_px"] = labels.height;
    json jc = json::array();
    for (const auto& c : labels.classes) jc.push_back({{"id", c.id}, {"name", c.name}});
    header["classes"] = jc;

    std::ofstream out(path, std::ios::binary);
    if (!out) raise(ErrorCode::io, "cannot open '" + path.string() + "' for writing");
    out << "LBL1\n" << header.dump() << "\n";
    out.write(reinterpret_cast<const char*>(labels.data.data()),
              static_cast<std::streamsize>(labels.data.size() * sizeof(std::int32_t)));
    if (!out) raise(ErrorCode::io, "write failed for '" + path.string() + "'");
}

LabelRaster read_labels(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(ErrorCode::io, "cannot open '" + path.string() + "'");
    std::string magic, header_line;
    std::getline(in, magic);
    if (magic != "LBL1") raise(ErrorCode::io, "'" + path.string() + "' is not a label file");
    std::getline(in, header_line);
    json header;
    try {
        header = json::parse(header_line);
    } catch (const json::exception& e) {
        raise(ErrorCode::io, "bad label header: " + std::string(e.what()));
    }
    LabelRaster l;
    l.width = header.at("width_px").get<int>();
    l.height = header.at("height_px").get<int>();
    for (const auto& jc : header.at("classes"))
        l.classes.push_back({jc.at("id").get<int>(), jc.at("name").get<std::string>()});
    l.data.resize(static_cast<std::size_t>(l.width) * l.height);
    in.read(reinterpret_cast<char*>(l.data.data()),
            static_cast<std::streamsize>(l.data.size() * sizeof(std::int32_t)));
    if (in.gcount() != static_cast<std::streamsize>(l.data.size() * sizeof(std::int32_t)))
        raise(ErrorCode::io, "truncated label data in '" + path.string() + "'");
    l.validate();
    return l;
}

bool RegimeRegion::contains(int x, int y) const {
    if (shape == Shape::rect)
        return x >= x0 && x < x0 + w && y >= y0 && y < y0 + h;
    const double dx = x + 0.5 - cx_px;
    const double dy = y + 0.5 - cy_px;
    const double r = std::sqrt(dx * dx + dy * dy);
    if (r < r_inner_px || r >= r_outer_px) return false;
    double theta = std::atan2(dy, dx) * 180.0 / 3.14159265358979323846;
    if (theta < 0) theta += 360.0;
    double a = theta0_deg, b = theta1_deg;
    if (a <= b) return theta >= a && theta < b;
    return theta >= a || theta < b;  // wedge crossing 0 deg
}

void write_regime_spec(const RegimeSpec& spec, const std::filesystem::path& path) {
    json j;
    json regions = json::array();
    for (const auto& r : spec.regions) {
        json jr;
        jr["policy_percent"] = r.policy_percent;
        if (r.shape == RegimeRegion::Shape::rect) {
            jr["shape"] = "rect";
            jr["x0"] = r.x0;
            jr["y0"] = r.y0;
            jr["w"] = r.w;
            jr["h"] = r.h;
        } else {
            jr["shape"] = "sector";
            jr["cx_px"] = r.cx_px;
            jr["cy_px"] = r.cy_px;
            jr["r_inner_px"] = r.r_inner_px;
            jr["r_outer_px"] = r.r_outer_px;
            jr["theta0_deg"] = r.theta0_deg;
            jr["theta1_deg"] = r.theta1_deg;
        }
        regions.push_back(jr);
    }
    j["regions"] = regions;
    std::ofstream out(path);
    if (!out) raise(ErrorCode::io, "cannot open '" + path.string() + "' for writing");
    out << j.dump(2) << "\n";
}

RegimeSpec read_regime_spec(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) raise(ErrorCode::io, "cannot open '" + path.string() + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        raise(ErrorCode::invalid_spec, "bad regime spec: " + std::string(e.what()));
    }
    RegimeSpec spec;
    try {
        for (const auto& jr : j.at("regions")) {
            RegimeRegion r;
            r.policy_percent = jr.at("policy_percent").get<int>();
            const std::string shape = jr.at("shape").get<std::string>();
            if (shape == "rect") {
                r.shape = RegimeRegion::Shape::rect;
                r.x0 = jr.at("x0").get<int>();
                r.y0 = jr.at("y0").get<int>();
                r.w = jr.at("w").get<int>();
                r.h = jr.at("h").get<int>();
            } else if (shape == "sector") {
                r.shape = RegimeRegion::Shape::sector;
                r.cx_px = jr.at("cx_px").get<double>();
                r.cy_px = jr.at("cy_px").get<double>();
                r.r_inner_px = jr.at("r_inner_px").get<double>();
                r.r_outer_px = jr.at("r_outer_px").get<double>();
                r.theta0_deg = jr.at("theta0_deg").get<double>();
                r.theta1_deg = jr.at("theta1_deg").get<double>();
            } else {
                raise(ErrorCode::invalid_spec, "unknown region shape '" + shape + "'");
            }
            spec.regions.push_back(r);
        }
    } catch (const json::exception& e) {
        raise(ErrorCode::invalid_spec, "bad regime spec: " + std::string(e.what()));
    }
    return spec;
}

VegetationIndex vegetation_index_from_name(const std::string& name) {
    std::string up;
    for (char c : name) up += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    if (up == "NDVI") return VegetationIndex::NDVI;
    if (up == "GNDVI") return VegetationIndex::GNDVI;
    if (up == "GRVI") return VegetationIndex::GRVI;
    raise(ErrorCode::invalid_argument, "unknown vegetation index '" + name + "'");
}

const char* vegetation_index_name(VegetationIndex idx) {
    switch (idx) {
        case VegetationIndex::NDVI: return "NDVI";
        case VegetationIndex::GNDVI: return "GNDVI";
        case VegetationIndex::GRVI: return "GRVI";
    }
    return "?";
}

BandStack compute_index(const BandStack& stack, VegetationIndex index) {
    const char *a_name = nullptr, *b_name = nullptr;
    switch (index) {
        case VegetationIndex::NDVI: a_name = "nir"; b_name = "red"; break;
        case VegetationIndex::GNDVI: a_name = "nir"; b_name = "green"; break;
        case VegetationIndex::GRVI: a_name = "green"; b_name = "red"; break;
    }
    const int ia = stack.require_band(a_name);
    const int ib = stack.require_band(b_name);

    std::string out_name = vegetation_index_name(index);
    std::transform(out_name.begin(), out_name.end(), out_name.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    BandStack out = BandStack::make(stack.width, stack.height, {{out_name, 0, "index"}},
                                    stack.pixel_size_m, stack.acquisition_date);
    const auto& pa = stack.planes[ia];
    const auto& pb = stack.planes[ib];
    auto& dst = out.planes[0];
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(dst.size()); ++i) {
        const float a = pa[i], b = pb[i];
        const float denom = a + b;
        dst[i] = (std::isnan(a) || std::isnan(b) || denom == 0.0f) ? kNaN : (a - b) / denom;
    }
    return out;
}

namespace {

LabelRaster majority_filter_3x3(const LabelRaster& in) {
    LabelRaster out = in;
    const int w = in.width, h = in.height;
#pragma omp parallel for schedule(static)
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (in.at(y, x) == LabelRaster::unlabeled) continue;
            // small id set; count votes in class order
            int best_id = LabelRaster::unlabeled, best_n = 0;
            for (const auto& c : in.classes) {
                int n = 0;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        int yy = y + dy, xx = x + dx;
                        if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                        if (in.at(yy, xx) == c.id) ++n;
                    }
                if (n > best_n) {  // ties keep the earlier (lower) id
                    best_n = n;
                    best_id = c.id;
                }
            }
            out.set(y, x, best_id);
        }
    return out;
}

}  // namespace

LabelRaster thermal_threshold_labels(const BandStack& thermal, double threshold_temp,
                                     bool morphology_clean) {
    const int band = thermal.require_band("thermal");
    LabelRaster out =
        LabelRaster::make(thermal.width, thermal.height, {{0, "irrigated"}, {1, "stressed_dry"}});
    const auto& plane = thermal.planes[band];
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(plane.size()); ++i) {
        const float v = plane[i];
        if (std::isnan(v)) continue;
        out.data[i] = v >= threshold_temp ? 1 : 0;
    }
    if (morphology_clean) out = majority_filter_3x3(out);
    return out;
}

LabelRaster rasterize_regimes(const RegimeSpec& spec, int width, int height) {
    std::vector<int> policies;
    for (const auto& r : spec.regions) policies.push_back(r.policy_percent);
    std::sort(policies.begin(), policies.end());
    policies.erase(std::unique(policies.begin(), policies.end()), policies.end());

    std::vector<ClassInfo> classes;
    std::map<int, int> policy_to_id;
    for (std::size_t i = 0; i < policies.size(); ++i) {
        policy_to_id[policies[i]] = static_cast<int>(i);
        classes.push_back({static_cast<int>(i), std::to_string(policies[i]) + "%"});
    }

    for (const auto& r : spec.regions) {
        if (r.shape == RegimeRegion::Shape::rect &&
            (r.x0 < 0 || r.y0 < 0 || r.w < 0 || r.h < 0 || r.x0 + r.w > width ||
             r.y0 + r.h > height))
            raise(ErrorCode::invalid_spec, "regime region out of bounds");
    }

    LabelRaster out = LabelRaster::make(width, height, classes);
    bool overlap = false;
    for (const auto& r : spec.regions) {
        const int id = policy_to_id.at(r.policy_percent);
#pragma omp parallel for schedule(static) reduction(|| : overlap)
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) {
                if (!r.contains(x, y)) continue;
                auto& cell = out.data[static_cast<std::size_t>(y) * width + x];
                if (cell != LabelRaster::unlabeled) overlap = true;
                cell = id;
            }
    }
    if (overlap) raise(ErrorCode::invalid_spec, "regime regions overlap");
    return out;
}

HistogramTable histogram_by_class(const BandStack& values, const LabelRaster& labels, int bins) {
    if (bins <= 0) raise(ErrorCode::invalid_argument, "bins must be positive");
    if (values.band_count() != 1)
        raise(ErrorCode::invalid_argument, "histogram_by_class expects a single-band stack");
    if (values.width != labels.width || values.height != labels.height)
        raise(ErrorCode::invalid_argument, "value/label dims mismatch");

    const auto& plane = values.planes[0];
    bool any_finite = false;
    for (float v : plane)
        if (!std::isnan(v)) {
            any_finite = true;
            break;
        }
    if (!any_finite) raise(ErrorCode::degenerate_input, "all-NaN value raster");

    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < plane.size(); ++i) {
        if (labels.data[i] == LabelRaster::unlabeled || std::isnan(plane[i])) continue;
        lo = std::min(lo, static_cast<double>(plane[i]));
        hi = std::max(hi, static_cast<double>(plane[i]));
    }

    HistogramTable table;
    if (!std::isfinite(lo)) return table;  // nothing labeled & finite -> empty table
    if (lo == hi) {
        lo -= 0.5;
        hi += 0.5;
    }
    table.edges.resize(bins + 1);
    for (int i = 0; i <= bins; ++i)
        table.edges[i] = lo + (hi - lo) * i / bins;

    std::vector<ClassInfo> sorted = labels.classes;
    std::sort(sorted.begin(), sorted.end(),
              [](const ClassInfo& a, const ClassInfo& b) { return a.id < b.id; });

    for (const auto& c : sorted) {
        ClassHistogram row;
        row.class_id = c.id;
        row.class_name = c.name;
        row.counts.assign(bins, 0);
        double sum = 0, sumsq = 0;
        for (std::size_t i = 0; i < plane.size(); ++i) {
            if (labels.data[i] != c.id || std::isnan(plane[i])) continue;
            const double v = plane[i];
            int bin = static_cast<int>((v - lo) / (hi - lo) * bins);
            bin = std::clamp(bin, 0, bins - 1);
            ++row.counts[bin];
            ++row.n;
            sum += v;
            sumsq += v * v;
        }
        if (row.n > 0) {
            row.mean = sum / row.n;
            row.stddev = std::sqrt(std::max(0.0, sumsq / row.n - row.mean * row.mean));
            table.rows.push_back(std::move(row));
        }
    }
    return table;
}

void write_histogram_csv(const HistogramTable& table, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) raise(ErrorCode::io, "cannot open '" + path.string() + "' for writing");
    out << "class,bin_lo,bin_hi,count\n";
    for (const auto& row : table.rows)
        for (std::size_t b = 0; b + 1 < table.edges.size(); ++b)
            out << row.class_name << ',' << table.edges[b] << ',' << table.edges[b + 1] << ','
                << row.counts[b] << '\n';
    out << "\nclass,mean,std\n";
    for (const auto& row : table.rows)
        out << row.class_name << ',' << row.mean << ',' << row.stddev << '\n';
}

}  // namespace agrisr
