#include "agrisr/bsf.hpp"

#include <bit>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

static_assert(std::endian::native == std::endian::little,
              "BSF I/O assumes a little-endian host");

namespace agrisr {

using nlohmann::json;

void write_bsf(const BandStack& stack, const std::filesystem::path& path) {
    stack.validate();
    json header;
    header["width_px"] = stack.width;
    header["height_px"] = stack.height;
    header["pixel_size_m"] = stack.pixel_size_m;
    header["acquisition_date"] = stack.acquisition_date;
    json bands = json::array();
    for (const auto& b : stack.bands) {
        json jb;
        jb["name"] = b.name;
        if (b.center_wavelength_nm > 0)
            jb["center_wavelength_nm"] = b.center_wavelength_nm;
        else
            jb["center_wavelength_nm"] = nullptr;
        jb["units"] = b.units;
        bands.push_back(jb);
    }
    header["bands"] = bands;

    std::ofstream out(path, std::ios::binary);
    if (!out) raise(ErrorCode::io, "cannot open '" + path.string() + "' for writing");
    out << "BSF1\n" << header.dump() << "\n";
    for (const auto& plane : stack.planes)
        out.write(reinterpret_cast<const char*>(plane.data()),
                  static_cast<std::streamsize>(plane.size() * sizeof(float)));
    if (!out) raise(ErrorCode::io, "write failed for '" + path.string() + "'");
}

BandStack read_bsf(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(ErrorCode::io, "cannot open '" + path.string() + "'");
    std::string magic, header_line;
    std::getline(in, magic);
    if (magic != "BSF1") raise(ErrorCode::io, "'" + path.string() + "' is not a BSF file");
    std::getline(in, header_line);
    json header;
    try {
        header = json::parse(header_line);
    } catch (const json::exception& e) {
        raise(ErrorCode::io, "bad BSF header in '" + path.string() + "': " + e.what());
    }

    BandStack stack;
    try {
        stack.width = header.at("width_px").get<int>();
        stack.height = header.at("height_px").get<int>();
        stack.pixel_size_m = header.at("pixel_size_m").get<double>();
        stack.acquisition_date = header.at("acquisition_date").get<std::string>();
        for (const auto& jb : header.at("bands")) {
            BandInfo b;
            b.name = jb.at("name").get<std::string>();
            if (jb.contains("center_wavelength_nm") && !jb["center_wavelength_nm"].is_null())
                b.center_wavelength_nm = jb["center_wavelength_nm"].get<double>();
            b.units = jb.value("units", "");
            stack.bands.push_back(b);
        }
    } catch (const json::exception& e) {
        raise(ErrorCode::io, "bad BSF header in '" + path.string() + "': " + e.what());
    }
    if (stack.width <= 0 || stack.height <= 0 || stack.pixel_size_m <= 0)
        raise(ErrorCode::io, "bad BSF dims in '" + path.string() + "'");

    stack.planes.assign(stack.bands.size(), std::vector<float>(stack.cell_count()));
    for (auto& plane : stack.planes) {
        in.read(reinterpret_cast<char*>(plane.data()),
                static_cast<std::streamsize>(plane.size() * sizeof(float)));
        if (in.gcount() != static_cast<std::streamsize>(plane.size() * sizeof(float)))
            raise(ErrorCode::io, "truncated BSF data in '" + path.string() + "'");
    }
    stack.validate();
    return stack;
}

void write_manifest(const std::vector<ManifestRow>& rows, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) raise(ErrorCode::io, "cannot open '" + path.string() + "' for writing");
    out << "sensor_id,kind,path,date\n";
    for (const auto& r : rows) {
        if (r.path.find(',') != std::string::npos)
            raise(ErrorCode::invalid_argument, "manifest paths must not contain commas");
        out << r.sensor_id << ',' << map_kind_name(r.kind) << ',' << r.path << ',' << r.date
            << '\n';
    }
}

std::vector<ManifestRow> read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) raise(ErrorCode::io, "cannot open manifest '" + path.string() + "'");
    std::string line;
    std::getline(in, line);
    if (line != "sensor_id,kind,path,date")
        raise(ErrorCode::io, "bad manifest header in '" + path.string() + "'");
    std::vector<ManifestRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        if (fields.size() != 4)
            raise(ErrorCode::io, "bad manifest row '" + line + "'");
        ManifestRow r;
        r.sensor_id = std::stoi(fields[0]);
        r.kind = map_kind_from_name(fields[1]);
        r.path = fields[2];
        r.date = fields[3];
        validate_date(r.date);
        rows.push_back(r);
    }
    return rows;
}

SensorEnsemble load_ensemble(const std::filesystem::path& manifest_path) {
    const auto rows = read_manifest(manifest_path);
    const auto base = manifest_path.parent_path();

    std::map<std::pair<MapKind, int>, MapSet> sets;
    for (const auto& r : rows) {
        auto& set = sets[{r.kind, r.sensor_id}];
        set.sensor_id = r.sensor_id;
        set.kind = r.kind;
        BandStack stack = read_bsf(base / r.path);
        if (stack.acquisition_date != r.date)
            raise(ErrorCode::invalid_argument,
                  "manifest date " + r.date + " disagrees with stack date " +
                      stack.acquisition_date + " for '" + r.path + "'");
        set.maps.push_back(std::move(stack));
    }

    SensorEnsemble ensemble;
    for (auto& [key, set] : sets) {
        std::sort(set.maps.begin(), set.maps.end(),
                  [](const BandStack& a, const BandStack& b) {
                      return a.acquisition_date < b.acquisition_date;
                  });
        if (key.first == MapKind::scheduled)
            ensemble.scheduled_sets.push_back(std::move(set));
        else
            ensemble.on_demand_sets.push_back(std::move(set));
    }
    ensemble.validate();
    return ensemble;
}

}  // namespace agrisr
