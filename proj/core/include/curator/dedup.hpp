#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace curator::dedup {

// Fixed-width bit signature. Bit 0 is the most significant bit of the first
// byte; bytes are packed big-endian into 64-bit words so bit i lives at
// words[i / 64] >> (63 - i % 64).
class BinarySignature {
public:
    BinarySignature() = default;
    // width must be a power of two >= 64.
    BinarySignature(std::string image_id, std::size_t width);
    BinarySignature(std::string image_id, std::vector<std::uint64_t> words);

    static BinarySignature from_bytes(std::string image_id, std::span<const std::uint8_t> bytes);
    static BinarySignature from_hex(std::string image_id, std::string_view hex);

    const std::string& image_id() const { return image_id_; }
    std::size_t width() const { return words_.size() * 64; }
    std::span<const std::uint64_t> words() const { return words_; }

    bool bit(std::size_t i) const { return (words_[i / 64] >> (63 - i % 64)) & 1U; }
    void set_bit(std::size_t i, bool v);
    void flip_bit(std::size_t i) { words_[i / 64] ^= std::uint64_t{1} << (63 - i % 64); }

    std::vector<std::uint8_t> to_bytes() const;
    std::string to_hex() const;

    friend bool operator==(const BinarySignature&, const BinarySignature&) = default;

private:
    std::string image_id_;
    std::vector<std::uint64_t> words_;
};

bool valid_width(std::size_t width);

// Number of differing bits. Throws ValidationError on width mismatch.
std::size_t hamming(const BinarySignature& a, const BinarySignature& b);
std::size_t hamming(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b);

struct IndexOptions {
    // Number of disjoint chunks the code is split into. Must divide the width
    // and give chunks of at most 64 bits. 0 selects 16-bit chunks.
    std::size_t chunks = 0;
    // Largest radius the index will answer. Radii below `chunks` need only
    // exact chunk lookups; larger radii probe every chunk value within
    // floor(r / chunks) bits, or scan a chunk table when that is cheaper.
    std::size_t max_radius = 18;
};

struct Match {
    std::string image_id;
    std::size_t distance = 0;

    friend bool operator==(const Match&, const Match&) = default;
};

// Exact Hamming-radius search by multi-index hashing: if two codes differ in
// at most r bits, then split into m chunks at least one chunk differs in at
// most floor(r / m) bits. Every candidate is verified with a full popcount.
// Immutable after construction; queries are safe from any number of threads.
class DedupIndex {
public:
    // Throws ValidationError on mixed widths or an invalid chunk layout.
    DedupIndex(std::vector<BinarySignature> signatures, IndexOptions opts = {});
    // Empty index of the given width.
    explicit DedupIndex(std::size_t width, IndexOptions opts = {});

    // Every stored signature within `radius`, sorted by (distance, image_id).
    // Throws ValidationError if radius > max_radius() or on width mismatch.
    std::vector<Match> query_radius(const BinarySignature& probe, std::size_t radius) const;

    // Indices (into the construction order) of stored signatures within
    // `radius`, paired with distance, unsorted.
    std::vector<std::pair<std::uint32_t, std::uint32_t>> query_indices(std::span<const std::uint64_t> probe,
                                                                       std::size_t radius) const;

    std::size_t size() const { return ids_.size(); }
    std::size_t width() const { return width_; }
    std::size_t chunks() const { return chunks_; }
    std::size_t chunk_bits() const { return chunk_bits_; }
    std::size_t max_radius() const { return max_radius_; }
    const std::string& id(std::size_t i) const { return ids_[i]; }
    std::span<const std::uint64_t> code(std::size_t i) const {
        return {codes_.data() + i * words_, words_};
    }

private:
    struct Entry {
        std::uint64_t key;
        std::uint32_t index;
    };

    std::uint64_t chunk_value(std::span<const std::uint64_t> code, std::size_t chunk) const;
    void build();

    std::size_t width_ = 0;
    std::size_t words_ = 0;
    std::size_t chunks_ = 0;
    std::size_t chunk_bits_ = 0;
    std::size_t max_radius_ = 0;
    std::vector<std::string> ids_;
    std::vector<std::uint64_t> codes_;
    // One table per chunk, sorted by (key, index).
    std::vector<std::vector<Entry>> tables_;
};

struct PurgePair {
    std::string train_id;
    std::string test_id;
    std::size_t distance = 0;

    friend bool operator==(const PurgePair&, const PurgePair&) = default;
};

struct PurgeReport {
    std::vector<std::string> removed_ids; // sorted, unique
    std::vector<PurgePair> pairs;         // one minimum-distance witness per removed train signature
    std::size_t threshold = 0;
};

// Removes every train signature within `threshold` (inclusive) of any test
// signature. Witness ties are broken by test image_id.
PurgeReport purge_train_vs_test(const std::vector<BinarySignature>& train,
                                const std::vector<BinarySignature>& test,
                                std::size_t threshold,
                                IndexOptions opts = {});

nlohmann::json to_json(const PurgeReport& r);
PurgeReport purge_report_from_json(const nlohmann::json& j);

// Binary signature file: u32 LE width, u64 LE count, then per record
// u32 LE id length, id bytes, width/8 code bytes (MSB-first).
std::vector<BinarySignature> read_signatures(std::istream& in, const std::string& source = "<signatures>");
void write_signatures(std::ostream& out, const std::vector<BinarySignature>& sigs);
// Dispatches on extension: ".tsv"/".txt" hold "image_id<TAB>hex" lines,
// anything else is the binary format.
std::vector<BinarySignature> load_signatures(const std::filesystem::path& path);
void save_signatures(const std::filesystem::path& path, const std::vector<BinarySignature>& sigs);

// 64-bit difference hash of an 8-bit grayscale image (row-major). Only for
// demos and fixtures: it is a perceptual hash, not a learned embedding, and
// its distance scale differs.
BinarySignature difference_hash(std::string image_id, std::span<const std::uint8_t> gray,
                                std::size_t width, std::size_t height);

} // namespace curator::dedup
