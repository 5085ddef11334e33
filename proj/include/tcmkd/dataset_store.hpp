#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "tcmkd/signal.hpp"

namespace tcmkd {

// On-disk layout of an ingested dataset directory:
//   dataset.json          metadata: counts, norm stats, domain, split info
//   train_segments.bin    normalized segments, binary
//   test_segments.bin     absent for unsplit (target-domain) datasets
// Windows are rebuilt per recording on load; they are derived data.

struct StoredDataset {
    SplitDataset data;
    bool has_windows = true;
    bool split = true; // false: everything lives on the train side
    std::string domain;
};

void save_dataset(const std::filesystem::path& dir, const SplitDataset& data, bool has_windows, bool split);
StoredDataset load_dataset(const std::filesystem::path& dir);

} // namespace tcmkd
