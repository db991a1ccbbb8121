#pragma once

// Band-stack file format "BSF": a one-line JSON header (width_px,
// height_px, pixel_size_m, acquisition_date, bands) behind a magic line,
// followed by raw little-endian float32 planes, band-sequential,
// row-major. Plus the CSV manifest that assembles a SensorEnsemble.

#include <filesystem>
#include <string>
#include <vector>

#include "agrisr/raster.hpp"

namespace agrisr {

void write_bsf(const BandStack& stack, const std::filesystem::path& path);
BandStack read_bsf(const std::filesystem::path& path);

struct ManifestRow {
    int sensor_id = 0;
    MapKind kind = MapKind::scheduled;
    std::string path;  // relative to the manifest file
    std::string date;
};

void write_manifest(const std::vector<ManifestRow>& rows, const std::filesystem::path& path);
std::vector<ManifestRow> read_manifest(const std::filesystem::path& path);

// Reads every stack named by the manifest (paths resolved against the
// manifest's directory), groups rows into MapSets by (sensor_id, kind),
// and validates the ensemble.
SensorEnsemble load_ensemble(const std::filesystem::path& manifest_path);

}  // namespace agrisr
