#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>

namespace curator::synth {

struct SynthOptions {
    std::uint64_t seed = 7;
    std::size_t classes = 12;
    std::size_t web_per_class = 40;
    std::size_t pool_per_class = 30;
    std::size_t test_per_class = 10;
    std::size_t width = 256;
};

// Writes a small, fully deterministic corpus into `dir`: categories,
// taxonomy, search manifest with cross-category overlaps, train and test
// signatures with planted near-duplicates, pool scores and truth, goldens,
// exemplars, confusion pairs, test predictions, a worth curve and a
// config.json that runs every stage.
void write_corpus(const std::filesystem::path& dir, const SynthOptions& opts = {});

} // namespace curator::synth
