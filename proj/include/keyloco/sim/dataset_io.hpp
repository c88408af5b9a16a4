#pragma once

#include "keyloco/sim/dataset.hpp"

#include <string>

namespace keyloco::sim {

enum class DatasetFormat { bin_f32, csv };

// Single file: one-line JSON header (format flag, fps, nj, per-clip frame
// counts) followed by either raw little-endian f32 frames or CSV lines.
// The CSV path prints 17 significant digits and round-trips doubles exactly;
// the binary path rounds to f32.
void save_dataset(const std::string& path, const ReferenceDataset& ds, DatasetFormat format);
ReferenceDataset load_dataset(const std::string& path);

}  // namespace keyloco::sim
