#include "curator/dedup.hpp"

#include "curator/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <bit>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

namespace curator::dedup {

using nlohmann::json;

bool valid_width(std::size_t width) {
    return width >= 64 && std::has_single_bit(width);
}

BinarySignature::BinarySignature(std::string image_id, std::size_t width)
    : image_id_(std::move(image_id)) {
    if (!valid_width(width))
        throw ValidationError("signature width " + std::to_string(width) + " is not a power of two >= 64");
    words_.assign(width / 64, 0);
}

BinarySignature::BinarySignature(std::string image_id, std::vector<std::uint64_t> words)
    : image_id_(std::move(image_id)), words_(std::move(words)) {
    if (!valid_width(words_.size() * 64))
        throw ValidationError("signature width " + std::to_string(words_.size() * 64) +
                              " is not a power of two >= 64");
}

BinarySignature BinarySignature::from_bytes(std::string image_id, std::span<const std::uint8_t> bytes) {
    BinarySignature s(std::move(image_id), bytes.size() * 8);
    for (std::size_t i = 0; i < bytes.size(); ++i)
        s.words_[i / 8] |= std::uint64_t{bytes[i]} << (56 - 8 * (i % 8));
    return s;
}

BinarySignature BinarySignature::from_hex(std::string image_id, std::string_view hex) {
    if (hex.size() % 2 != 0)
        throw ValidationError("hex signature has odd length");
    auto nibble = [](char c) -> int {
        if (c >= '0' && c <= '9')
            return c - '0';
        if (c >= 'a' && c <= 'f')
            return c - 'a' + 10;
        if (c >= 'A' && c <= 'F')
            return c - 'A' + 10;
        return -1;
    };
    std::vector<std::uint8_t> bytes(hex.size() / 2);
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        const int hi = nibble(hex[2 * i]);
        const int lo = nibble(hex[2 * i + 1]);
        if (hi < 0 || lo < 0)
            throw ValidationError("invalid hex digit in signature");
        bytes[i] = static_cast<std::uint8_t>(hi << 4 | lo);
    }
    return from_bytes(std::move(image_id), bytes);
}

void BinarySignature::set_bit(std::size_t i, bool v) {
    const std::uint64_t mask = std::uint64_t{1} << (63 - i % 64);
    if (v)
        words_[i / 64] |= mask;
    else
        words_[i / 64] &= ~mask;
}

std::vector<std::uint8_t> BinarySignature::to_bytes() const {
    std::vector<std::uint8_t> out(words_.size() * 8);
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = static_cast<std::uint8_t>(words_[i / 8] >> (56 - 8 * (i % 8)));
    return out;
}

std::string BinarySignature::to_hex() const {
    static constexpr char digits[] = "0123456789abcdef";
    std::string s;
    for (auto b : to_bytes()) {
        s.push_back(digits[b >> 4]);
        s.push_back(digits[b & 0xF]);
    }
    return s;
}

std::size_t hamming(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b) {
    std::size_t d = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        d += static_cast<std::size_t>(std::popcount(a[i] ^ b[i]));
    return d;
}

std::size_t hamming(const BinarySignature& a, const BinarySignature& b) {
    if (a.width() != b.width())
        throw ValidationError("width mismatch: " + std::to_string(a.width()) + " vs " + std::to_string(b.width()));
    return hamming(a.words(), b.words());
}

namespace {

// Number of masks over `bits` bits with popcount <= max_flips, saturating at `cap`.
std::uint64_t ball_size(std::size_t bits, std::size_t max_flips, std::uint64_t cap) {
    std::uint64_t total = 0;
    std::uint64_t term = 1; // C(bits, k)
    for (std::size_t k = 0; k <= max_flips && k <= bits; ++k) {
        if (k > 0) {
            const std::uint64_t num = bits - k + 1;
            if (term > cap * k / num + 1)
                return cap;
            term = term * num / k;
        }
        total += term;
        if (total >= cap)
            return cap;
    }
    return total;
}

// Calls fn(mask) for every mask over `bits` low bits with popcount <= max_flips.
template <class Fn>
void for_each_flip_mask(std::size_t bits, std::size_t max_flips, Fn&& fn) {
    fn(std::uint64_t{0});
    if (max_flips == 0)
        return;
    // Depth-first over increasing bit positions; each mask is visited once.
    std::array<std::size_t, 64> pos{};
    std::size_t depth = 0;
    std::uint64_t mask = 0;
    pos[0] = 0;
    while (true) {
        if (pos[depth] < bits) {
            mask ^= std::uint64_t{1} << pos[depth];
            fn(mask);
            if (depth + 1 < max_flips) {
                pos[depth + 1] = pos[depth] + 1;
                ++depth;
                continue;
            }
            mask ^= std::uint64_t{1} << pos[depth];
            ++pos[depth];
            continue;
        }
        if (depth == 0)
            break;
        --depth;
        mask ^= std::uint64_t{1} << pos[depth];
        ++pos[depth];
    }
}

std::size_t default_chunks(std::size_t width) {
    return width / 16;
}

} // namespace

DedupIndex::DedupIndex(std::size_t width, IndexOptions opts) : width_(width) {
    if (!valid_width(width))
        throw ValidationError("signature width " + std::to_string(width) + " is not a power of two >= 64");
    words_ = width / 64;
    chunks_ = opts.chunks ? opts.chunks : default_chunks(width);
    max_radius_ = opts.max_radius;
    build();
}

DedupIndex::DedupIndex(std::vector<BinarySignature> signatures, IndexOptions opts) {
    width_ = signatures.empty() ? 256 : signatures.front().width();
    words_ = width_ / 64;
    chunks_ = opts.chunks ? opts.chunks : default_chunks(width_);
    max_radius_ = opts.max_radius;
    ids_.reserve(signatures.size());
    codes_.reserve(signatures.size() * words_);
    for (auto& s : signatures) {
        if (s.width() != width_)
            throw ValidationError("width mismatch in index build: " + s.image_id() + " has " +
                                  std::to_string(s.width()) + " bits, expected " + std::to_string(width_));
        if (ids_.size() == std::numeric_limits<std::uint32_t>::max())
            throw ValidationError("index holds at most 2^32-1 signatures");
        codes_.insert(codes_.end(), s.words().begin(), s.words().end());
        ids_.push_back(s.image_id());
    }
    build();
}

void DedupIndex::build() {
    if (chunks_ == 0 || width_ % chunks_ != 0)
        throw ValidationError("chunk count " + std::to_string(chunks_) + " must divide width " + std::to_string(width_));
    chunk_bits_ = width_ / chunks_;
    if (chunk_bits_ > 64)
        throw ValidationError("chunks of " + std::to_string(chunk_bits_) + " bits exceed 64; use more chunks");
    if (max_radius_ >= width_)
        throw ValidationError("max radius must be below the signature width");

    tables_.assign(chunks_, {});
    for (std::size_t c = 0; c < chunks_; ++c) {
        auto& t = tables_[c];
        t.reserve(ids_.size());
        for (std::size_t i = 0; i < ids_.size(); ++i)
            t.push_back({chunk_value(code(i), c), static_cast<std::uint32_t>(i)});
        std::sort(t.begin(), t.end(), [](const Entry& a, const Entry& b) {
            return a.key != b.key ? a.key < b.key : a.index < b.index;
        });
    }
}

std::uint64_t DedupIndex::chunk_value(std::span<const std::uint64_t> code, std::size_t chunk) const {
    const std::size_t start = chunk * chunk_bits_;
    const std::uint64_t w = code[start / 64];
    if (chunk_bits_ == 64)
        return w;
    const std::size_t shift = 64 - chunk_bits_ - start % 64;
    return (w >> shift) & ((std::uint64_t{1} << chunk_bits_) - 1);
}

std::vector<std::pair<std::uint32_t, std::uint32_t>>
DedupIndex::query_indices(std::span<const std::uint64_t> probe, std::size_t radius) const {
    if (radius > max_radius_)
        throw ValidationError("radius " + std::to_string(radius) + " exceeds index max radius " +
                              std::to_string(max_radius_));
    if (probe.size() != words_)
        throw ValidationError("probe width " + std::to_string(probe.size() * 64) + " does not match index width " +
                              std::to_string(width_));
    std::vector<std::pair<std::uint32_t, std::uint32_t>> out;
    if (ids_.empty())
        return out;

    const std::size_t sub_radius = radius / chunks_;
    std::vector<std::uint32_t> candidates;
    for (std::size_t c = 0; c < chunks_; ++c) {
        const auto& t = tables_[c];
        const std::uint64_t v = chunk_value(probe, c);
        // Wide chunks with a large sub-radius: scanning the table beats enumerating the ball.
        if (ball_size(chunk_bits_, sub_radius, t.size()) >= t.size()) {
            for (const auto& e : t)
                if (static_cast<std::size_t>(std::popcount(e.key ^ v)) <= sub_radius)
                    candidates.push_back(e.index);
            continue;
        }
        for_each_flip_mask(chunk_bits_, sub_radius, [&](std::uint64_t mask) {
            const std::uint64_t key = v ^ mask;
            auto it = std::lower_bound(t.begin(), t.end(), key,
                                       [](const Entry& e, std::uint64_t k) { return e.key < k; });
            for (; it != t.end() && it->key == key; ++it)
                candidates.push_back(it->index);
        });
    }
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
    for (auto i : candidates) {
        const std::size_t d = hamming(code(i), probe);
        if (d <= radius)
            out.emplace_back(i, static_cast<std::uint32_t>(d));
    }
    return out;
}

std::vector<Match> DedupIndex::query_radius(const BinarySignature& probe, std::size_t radius) const {
    if (probe.width() != width_)
        throw ValidationError("probe width " + std::to_string(probe.width()) + " does not match index width " +
                              std::to_string(width_));
    std::vector<Match> out;
    for (auto [i, d] : query_indices(probe.words(), radius))
        out.push_back({ids_[i], d});
    std::sort(out.begin(), out.end(), [](const Match& a, const Match& b) {
        return a.distance != b.distance ? a.distance < b.distance : a.image_id < b.image_id;
    });
    return out;
}

PurgeReport purge_train_vs_test(const std::vector<BinarySignature>& train,
                                const std::vector<BinarySignature>& test,
                                std::size_t threshold,
                                IndexOptions opts) {
    PurgeReport report;
    report.threshold = threshold;
    if (train.empty() || test.empty())
        return report;
    const std::size_t width = test.front().width();
    for (const auto& s : train)
        if (s.width() != width)
            throw ValidationError("width mismatch: train signature " + s.image_id() + " has " +
                                  std::to_string(s.width()) + " bits, test set has " + std::to_string(width));
    opts.max_radius = std::max(opts.max_radius, threshold);
    const DedupIndex index(test, opts);

    for (const auto& t : train) {
        const auto hits = index.query_indices(t.words(), threshold);
        if (hits.empty())
            continue;
        const auto best = std::min_element(hits.begin(), hits.end(), [&](const auto& a, const auto& b) {
            return a.second != b.second ? a.second < b.second : index.id(a.first) < index.id(b.first);
        });
        report.pairs.push_back({t.image_id(), index.id(best->first), best->second});
    }
    std::sort(report.pairs.begin(), report.pairs.end(), [](const PurgePair& a, const PurgePair& b) {
        if (a.train_id != b.train_id)
            return a.train_id < b.train_id;
        if (a.distance != b.distance)
            return a.distance < b.distance;
        return a.test_id < b.test_id;
    });
    for (const auto& p : report.pairs)
        report.removed_ids.push_back(p.train_id);
    report.removed_ids.erase(std::unique(report.removed_ids.begin(), report.removed_ids.end()),
                             report.removed_ids.end());
    return report;
}

json to_json(const PurgeReport& r) {
    json pairs = json::array();
    for (const auto& p : r.pairs)
        pairs.push_back({{"train_id", p.train_id}, {"test_id", p.test_id}, {"distance", p.distance}});
    return {{"threshold", r.threshold}, {"removed_ids", r.removed_ids}, {"pairs", std::move(pairs)}};
}

PurgeReport purge_report_from_json(const json& j) {
    PurgeReport r;
    r.threshold = j.at("threshold").get<std::size_t>();
    r.removed_ids = j.at("removed_ids").get<std::vector<std::string>>();
    for (const auto& p : j.at("pairs"))
        r.pairs.push_back({p.at("train_id").get<std::string>(), p.at("test_id").get<std::string>(),
                           p.at("distance").get<std::size_t>()});
    return r;
}

namespace {

template <class T>
void put_le(std::ostream& out, T v) {
    std::array<char, sizeof(T)> b{};
    for (std::size_t i = 0; i < sizeof(T); ++i)
        b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    out.write(b.data(), b.size());
}

template <class T>
T get_le(std::istream& in, const std::string& source, const char* what) {
    std::array<unsigned char, sizeof(T)> b{};
    if (!in.read(reinterpret_cast<char*>(b.data()), b.size()))
        throw ParseError(source, 0, std::string("truncated file reading ") + what);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
        v |= static_cast<T>(b[i]) << (8 * i);
    return v;
}

} // namespace

std::vector<BinarySignature> read_signatures(std::istream& in, const std::string& source) {
    const auto width = get_le<std::uint32_t>(in, source, "width");
    const auto count = get_le<std::uint64_t>(in, source, "count");
    if (!valid_width(width))
        throw ParseError(source, 0, "width " + std::to_string(width) + " is not a power of two >= 64");
    std::vector<BinarySignature> out;
    out.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(count, 1 << 20)));
    std::vector<std::uint8_t> bytes(width / 8);
    for (std::uint64_t n = 0; n < count; ++n) {
        const auto len = get_le<std::uint32_t>(in, source, "id length");
        std::string id(len, '\0');
        if (!in.read(id.data(), len))
            throw ParseError(source, 0, "truncated image id in record " + std::to_string(n));
        if (!in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size())))
            throw ParseError(source, 0, "truncated code in record " + std::to_string(n));
        out.push_back(BinarySignature::from_bytes(std::move(id), bytes));
    }
    return out;
}

void write_signatures(std::ostream& out, const std::vector<BinarySignature>& sigs) {
    const std::size_t width = sigs.empty() ? 256 : sigs.front().width();
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(width));
    put_le<std::uint64_t>(out, sigs.size());
    for (const auto& s : sigs) {
        if (s.width() != width)
            throw ValidationError("cannot write mixed-width signatures");
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.image_id().size()));
        out.write(s.image_id().data(), static_cast<std::streamsize>(s.image_id().size()));
        const auto bytes = s.to_bytes();
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    }
}

namespace {

bool is_text_format(const std::filesystem::path& p) {
    const auto ext = p.extension();
    return ext == ".tsv" || ext == ".txt";
}

} // namespace

std::vector<BinarySignature> load_signatures(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open " + path.string());
    if (!is_text_format(path))
        return read_signatures(in, path.string());

    std::vector<BinarySignature> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.empty() || line[0] == '#')
            continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw ParseError(path.string(), lineno, "expected image_id<TAB>hex");
        try {
            out.push_back(BinarySignature::from_hex(line.substr(0, tab), line.substr(tab + 1)));
        } catch (const ValidationError& e) {
            throw ParseError(path.string(), lineno, e.what());
        }
        if (out.back().width() != out.front().width())
            throw ParseError(path.string(), lineno, "signature width differs from the first record");
    }
    return out;
}

void save_signatures(const std::filesystem::path& path, const std::vector<BinarySignature>& sigs) {
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("cannot write " + path.string());
    if (is_text_format(path)) {
        for (const auto& s : sigs)
            out << s.image_id() << '\t' << s.to_hex() << '\n';
    } else {
        write_signatures(out, sigs);
    }
}

BinarySignature difference_hash(std::string image_id, std::span<const std::uint8_t> gray,
                                std::size_t width, std::size_t height) {
    if (width == 0 || height == 0 || gray.size() != width * height)
        throw ValidationError("difference_hash: pixel buffer does not match dimensions");
    // Box-average down to 9x8, then compare horizontal neighbours.
    constexpr std::size_t W = 9, H = 8;
    std::array<double, W * H> small{};
    for (std::size_t y = 0; y < H; ++y) {
        const std::size_t y0 = y * height / H;
        const std::size_t y1 = std::max(y0 + 1, (y + 1) * height / H);
        for (std::size_t x = 0; x < W; ++x) {
            const std::size_t x0 = x * width / W;
            const std::size_t x1 = std::max(x0 + 1, (x + 1) * width / W);
            double sum = 0;
            for (std::size_t yy = y0; yy < y1; ++yy)
                for (std::size_t xx = x0; xx < x1; ++xx)
                    sum += gray[yy * width + xx];
            small[y * W + x] = sum / static_cast<double>((y1 - y0) * (x1 - x0));
        }
    }
    BinarySignature sig(std::move(image_id), 64);
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x + 1 < W; ++x)
            sig.set_bit(y * 8 + x, small[y * W + x] > small[y * W + x + 1]);
    return sig;
}

} // namespace curator::dedup
