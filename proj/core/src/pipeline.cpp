#include "curator/pipeline.hpp"

#include "curator/annotation_store.hpp"
#include "curator/digest.hpp"
#include "curator/error.hpp"
#include "curator/evalkit.hpp"
#include "curator/sampler.hpp"
#include "curator/text.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <sstream>

#ifndef CURATOR_VERSION
#define CURATOR_VERSION "dev"
#endif

namespace curator::pipeline {

using nlohmann::json;
namespace fs = std::filesystem;

std::string tool_version() {
    return CURATOR_VERSION;
}

std::string stage_name(Stage s) {
    switch (s) {
    case Stage::ingest: return "ingest";
    case Stage::filter: return "filter";
    case Stage::purge: return "purge";
    case Stage::sample: return "sample";
    case Stage::annotate: return "annotate";
    case Stage::export_: return "export";
    case Stage::eval: return "eval";
    }
    return "?";
}

Stage parse_stage(const std::string& s) {
    for (auto st : {Stage::ingest, Stage::filter, Stage::purge, Stage::sample, Stage::annotate, Stage::export_,
                    Stage::eval})
        if (stage_name(st) == s)
            return st;
    throw ValidationError("unknown stage '" + s + "'");
}

std::vector<Stage> dataset_stages() {
    return {Stage::ingest, Stage::filter, Stage::purge, Stage::sample, Stage::annotate, Stage::export_};
}

// ---------------------------------------------------------------------------
// Configuration

namespace {

const std::set<std::string> kPathKeys = {
    "manifest", "categories", "train_signatures", "test_signatures", "scores", "truth",
    "goldens", "exemplars", "confusion", "exclude", "judgments", "ground_truth",
    "predictions", "taxonomy", "taxonomy_map", "worth_curve"};

void check_keys(const json& obj, const std::string& where, const std::set<std::string>& allowed) {
    if (!obj.is_object())
        throw ValidationError("config: '" + where + "' must be an object");
    for (const auto& [k, v] : obj.items())
        if (!allowed.count(k))
            throw ValidationError("config: unknown key '" + (where.empty() ? k : where + "." + k) + "'");
}

template <class T>
T get_or(const json& obj, const char* key, T fallback, const std::string& where) {
    if (!obj.contains(key))
        return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw ValidationError("config: '" + where + "." + key + "' has the wrong type");
    }
}

} // namespace

RunConfig RunConfig::from_json(const json& j, const fs::path& base_dir) {
    check_keys(j, "", {"seed", "output_dir", "paths", "ingest", "filter", "dedup", "sampler", "annotate", "eval"});
    RunConfig c;
    c.raw = j;
    if (!j.contains("seed") || !j.at("seed").is_number_integer() || j.at("seed").get<std::int64_t>() < 0)
        throw ValidationError("config: 'seed' is required and must be a non-negative integer");
    c.seed = j.at("seed").get<std::uint64_t>();

    auto resolve = [&](const fs::path& p) { return p.is_absolute() ? p : base_dir / p; };
    c.output_dir = resolve(get_or<std::string>(j, "output_dir", "out", ""));

    if (j.contains("paths")) {
        check_keys(j.at("paths"), "paths", kPathKeys);
        for (const auto& [k, v] : j.at("paths").items()) {
            if (!v.is_string())
                throw ValidationError("config: 'paths." + k + "' must be a string");
            const fs::path p = resolve(v.get<std::string>());
            if (!fs::exists(p))
                throw ValidationError("config: paths." + k + " = " + p.string() + " does not exist");
            c.paths[k] = p;
        }
    }

    const json empty = json::object();
    const json& ingest = j.value("ingest", empty);
    check_keys(ingest, "ingest", {"per_category_cap"});
    c.per_category_cap = get_or<std::size_t>(ingest, "per_category_cap", 800, "ingest");

    const json& filter = j.value("filter", empty);
    check_keys(filter, "filter", {"identity", "r_dup"});
    const auto identity = get_or<std::string>(filter, "identity", "exact", "filter");
    if (identity == "exact")
        c.identity = xfilter::IdentityMode::Kind::exact_id;
    else if (identity == "signature")
        c.identity = xfilter::IdentityMode::Kind::signature;
    else
        throw ValidationError("config: filter.identity must be 'exact' or 'signature'");
    c.r_dup = get_or<std::size_t>(filter, "r_dup", 4, "filter");
    if (c.identity == xfilter::IdentityMode::Kind::signature && !c.has("train_signatures"))
        throw ValidationError("config: signature identity needs paths.train_signatures");

    const json& dedup = j.value("dedup", empty);
    check_keys(dedup, "dedup", {"width", "chunks", "threshold", "max_radius"});
    c.width = get_or<std::size_t>(dedup, "width", 256, "dedup");
    c.chunks = get_or<std::size_t>(dedup, "chunks", c.width / 16, "dedup");
    c.threshold = get_or<std::size_t>(dedup, "threshold", 18, "dedup");
    c.max_radius = get_or<std::size_t>(dedup, "max_radius", 18, "dedup");
    if (!dedup::valid_width(c.width))
        throw ValidationError("config: dedup.width must be a power of two >= 64");
    if (c.chunks == 0 || c.width % c.chunks != 0 || c.width / c.chunks > 64)
        throw ValidationError("config: dedup.chunks must divide the width into chunks of at most 64 bits");
    if (c.threshold > c.max_radius)
        throw ValidationError("config: dedup.threshold " + std::to_string(c.threshold) +
                              " exceeds the index max radius " + std::to_string(c.max_radius));
    if (c.max_radius >= c.width)
        throw ValidationError("config: dedup.max_radius must be below the width");
    if (c.r_dup >= c.width)
        throw ValidationError("config: filter.r_dup must be below the width");

    const json& sampler = j.value("sampler", empty);
    check_keys(sampler, "sampler", {"prior", "budget", "seed_size", "round_multiplier", "rounds"});
    if (sampler.contains("prior")) {
        const auto& p = sampler.at("prior");
        if (p.is_object())
            c.prior = p.get<std::map<CategoryId, double>>();
        else if (!(p.is_string() && p.get<std::string>() == "uniform"))
            throw ValidationError("config: sampler.prior must be \"uniform\" or an object of weights");
    }
    if (sampler.contains("budget"))
        c.budget = get_or<std::size_t>(sampler, "budget", 0, "sampler");
    if (sampler.contains("seed_size"))
        c.seed_size = get_or<std::size_t>(sampler, "seed_size", 0, "sampler");
    c.round_multiplier = get_or<double>(sampler, "round_multiplier", 10.0, "sampler");
    c.rounds = get_or<std::size_t>(sampler, "rounds", 1, "sampler");
    if (c.rounds < 1 || c.rounds > 2)
        throw ValidationError("config: sampler.rounds must be 1 or 2");
    if (c.budget && c.seed_size)
        throw ValidationError("config: give sampler.budget or sampler.seed_size, not both");

    const json& ann = j.value("annotate", empty);
    check_keys(ann, "annotate", {"golden_rate", "host", "port", "simulate"});
    c.golden_rate = get_or<double>(ann, "golden_rate", 0.1, "annotate");
    if (!(c.golden_rate >= 0 && c.golden_rate <= 1))
        throw ValidationError("config: annotate.golden_rate must lie in [0, 1]");
    c.host = get_or<std::string>(ann, "host", "127.0.0.1", "annotate");
    c.port = get_or<int>(ann, "port", 8080, "annotate");
    if (ann.contains("simulate")) {
        const auto& s = ann.at("simulate");
        check_keys(s, "annotate.simulate", {"raters", "error_rate", "mean_seconds"});
        annotate::SimulationOptions o;
        o.raters = get_or<std::size_t>(s, "raters", 5, "annotate.simulate");
        o.error_rate = get_or<double>(s, "error_rate", 0.1, "annotate.simulate");
        o.mean_seconds = get_or<double>(s, "mean_seconds", 2.0, "annotate.simulate");
        if (o.raters < annotate::kVotesPerTask)
            throw ValidationError("config: annotate.simulate.raters must be at least 3");
        if (!c.has("truth"))
            throw ValidationError("config: annotate.simulate needs paths.truth");
        c.simulate = o;
    }

    const json& ev = j.value("eval", empty);
    check_keys(ev, "eval", {"metrics", "gt_size", "gt_accuracy"});
    if (ev.contains("metrics"))
        c.metrics = ev.at("metrics").get<std::vector<std::string>>();
    for (const auto& m : c.metrics)
        if (m != "top1" && m != "map" && m != "confusion" && m != "lca" && m != "worth")
            throw ValidationError("config: unknown metric '" + m + "'");
    return c;
}

const fs::path& RunConfig::path(const std::string& key) const {
    const auto it = paths.find(key);
    if (it == paths.end())
        throw ValidationError("config: paths." + key + " is required for this stage");
    return it->second;
}

std::size_t RunConfig::sampling_budget() const {
    if (budget)
        return *budget;
    if (seed_size)
        return sampler::SamplingBudget::from_seed(*seed_size, round_multiplier).b;
    throw ValidationError("config: sampler.budget or sampler.seed_size is required");
}

json load_config_document(const fs::path& path) {
    try {
        return json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw ParseError(path.string(), 0, e.what());
    }
}

void apply_override(json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ValidationError("override '" + assignment + "' must look like key.path=value");
    const std::string key = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(raw);
    } catch (const json::parse_error&) {
        value = raw;
    }
    json* cur = &doc;
    std::stringstream ss(key);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.'))
        parts.push_back(part);
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
        if (!cur->contains(parts[i]) || !(*cur)[parts[i]].is_object())
            (*cur)[parts[i]] = json::object();
        cur = &(*cur)[parts[i]];
    }
    (*cur)[parts.back()] = std::move(value);
}

// ---------------------------------------------------------------------------
// Artifacts

json to_json(const RunArtifact& a) {
    return {{"stage", a.stage},
            {"inputs", a.inputs},
            {"outputs", a.outputs},
            {"wall_seconds", a.wall_seconds},
            {"tool_version", a.tool_version}};
}

RunArtifact artifact_from_json(const json& j) {
    RunArtifact a;
    a.stage = j.at("stage").get<std::string>();
    a.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
    a.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
    a.wall_seconds = j.value("wall_seconds", 0.0);
    a.tool_version = j.value("tool_version", std::string());
    return a;
}

// ---------------------------------------------------------------------------
// Export

std::vector<ExportRow> export_dataset(const SearchManifest& filtered,
                                      const std::vector<std::pair<std::string, CategoryId>>& accepted,
                                      const dedup::PurgeReport& purge, const SearchManifest* ground_truth) {
    const std::set<std::string> purged(purge.removed_ids.begin(), purge.removed_ids.end());
    std::map<std::pair<CategoryId, std::string>, ExportRow> rows;
    std::map<std::string, std::string> urls;
    for (const auto& r : filtered.records)
        if (!r.url.empty())
            urls.emplace(r.image_id, r.url);

    auto add = [&](const std::string& id, const CategoryId& cat, const char* source, const std::string& url) {
        auto& row = rows[{cat, id}];
        row.image_id = id;
        row.category = cat;
        row.sources.insert(source);
        if (row.url.empty())
            row.url = url;
    };
    for (const auto& r : filtered.records)
        if (!purged.count(r.image_id))
            add(r.image_id, r.category, "web", r.url);
    for (const auto& [id, cat] : accepted) {
        if (purged.count(id))
            continue;
        const auto u = urls.find(id);
        add(id, cat, "annotated", u == urls.end() ? std::string() : u->second);
    }
    if (ground_truth)
        for (const auto& r : ground_truth->records)
            add(r.image_id, r.category, "ground_truth", r.url);

    std::vector<ExportRow> out;
    out.reserve(rows.size());
    for (auto& [key, row] : rows)
        out.push_back(std::move(row));
    return out;
}

std::string export_jsonl(const std::vector<ExportRow>& rows) {
    std::string s;
    for (const auto& r : rows) {
        json j = {{"image_id", r.image_id}, {"category_id", r.category}, {"sources", r.sources}};
        if (!r.url.empty())
            j["url"] = r.url;
        s += j.dump();
        s += '\n';
    }
    return s;
}

std::vector<ExportRow> read_export(const fs::path& path) {
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open " + path.string());
    std::vector<ExportRow> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty())
            continue;
        const json j = json::parse(line);
        rows.push_back({j.at("image_id").get<std::string>(), j.at("category_id").get<std::string>(),
                        j.at("sources").get<std::set<std::string>>(), j.value("url", std::string())});
    }
    return rows;
}

Verification verify_export(const std::vector<ExportRow>& rows, const std::vector<dedup::BinarySignature>& train,
                           const std::vector<dedup::BinarySignature>& test, std::size_t threshold,
                           dedup::IndexOptions opts) {
    Verification v;
    std::map<std::string, std::vector<const dedup::BinarySignature*>> by_id;
    for (const auto& s : train)
        by_id[s.image_id()].push_back(&s);
    if (test.empty()) {
        for (const auto& r : rows)
            v.checked += by_id.count(r.image_id) ? 1 : 0;
        return v;
    }
    opts.max_radius = std::max(opts.max_radius, threshold);
    const dedup::DedupIndex index(test, opts);
    std::set<std::string> done;
    for (const auto& r : rows) {
        if (!done.insert(r.image_id).second)
            continue;
        const auto it = by_id.find(r.image_id);
        if (it == by_id.end()) {
            v.unverified.push_back(r.image_id);
            continue;
        }
        ++v.checked;
        for (const auto* s : it->second) {
            const auto hits = index.query_radius(*s, threshold);
            if (!hits.empty())
                v.violations.push_back({r.image_id, hits.front().image_id, hits.front().distance});
        }
    }
    return v;
}

// ---------------------------------------------------------------------------
// Stage runner

namespace {

using Clock = std::chrono::steady_clock;

struct StageIo {
    fs::path dir;
    std::map<std::string, std::string> files; // relative name -> bytes

    void put(const std::string& name, std::string bytes) { files[name] = std::move(bytes); }
    void put_json(const std::string& name, const json& j) { files[name] = j.dump(2) + "\n"; }
};

fs::path stage_dir(const RunConfig& c, Stage s) {
    return c.output_dir / stage_name(s);
}

std::string params_digest(const RunConfig& c, std::initializer_list<const char*> sections, bool with_seed) {
    json p = json::object();
    for (const char* s : sections)
        p[s] = c.raw.value(s, json::object());
    if (with_seed)
        p["seed"] = c.seed;
    return sha256_hex(p.dump());
}

fs::path upstream(const RunConfig& c, Stage s, const std::string& file) {
    const fs::path dir = stage_dir(c, s);
    if (!fs::exists(dir / "artifact.json") || !fs::exists(dir / file))
        throw ValidationError("missing upstream artifact " + (dir / file).string() + "; run stage '" +
                              stage_name(s) + "' first");
    return dir / file;
}

std::map<std::string, std::optional<CategoryId>> load_truth(const fs::path& path) {
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open " + path.string());
    std::map<std::string, std::optional<CategoryId>> truth;
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
            throw ParseError(path.string(), lineno, "expected image_id<TAB>class_id");
        const std::string cls = text::trim(line.substr(tab + 1));
        truth[line.substr(0, tab)] = (cls.empty() || cls == "-") ? std::nullopt : std::optional<CategoryId>(cls);
    }
    return truth;
}

template <class Fn>
void for_each_json_line(const fs::path& path, Fn&& fn) {
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open " + path.string());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (text::trim(line).empty())
            continue;
        try {
            fn(json::parse(line));
        } catch (const json::exception& e) {
            throw ParseError(path.string(), lineno, e.what());
        }
    }
}

std::set<std::string> load_id_list(const fs::path& path) {
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open " + path.string());
    std::set<std::string> ids;
    std::string line;
    while (std::getline(in, line)) {
        const auto t = text::trim(line);
        if (!t.empty() && t[0] != '#')
            ids.insert(t);
    }
    return ids;
}

std::vector<dedup::BinarySignature> load_checked_signatures(const RunConfig& c, const std::string& key) {
    auto sigs = dedup::load_signatures(c.path(key));
    for (const auto& s : sigs)
        if (s.width() != c.width)
            throw ValidationError(key + ": signature '" + s.image_id() + "' has " + std::to_string(s.width()) +
                                  " bits, config says " + std::to_string(c.width));
    return sigs;
}

dedup::IndexOptions index_options(const RunConfig& c) {
    return {c.chunks, c.max_radius};
}

// Input digests for a stage. Reading these is cheap next to running it.
std::map<std::string, std::string> stage_inputs(const RunConfig& c, Stage s) {
    std::map<std::string, std::string> in;
    auto file = [&](const std::string& key) {
        if (c.has(key))
            in["file:" + key] = sha256_file(c.path(key));
    };
    auto up = [&](Stage st, const std::string& f) { in[stage_name(st) + "/" + f] = sha256_file(upstream(c, st, f)); };
    switch (s) {
    case Stage::ingest:
        c.path("manifest");
        file("manifest");
        file("categories");
        in["params"] = params_digest(c, {"ingest"}, false);
        break;
    case Stage::filter:
        up(Stage::ingest, "manifest.jsonl");
        file("categories");
        if (c.identity == xfilter::IdentityMode::Kind::signature)
            file("train_signatures");
        in["params"] = params_digest(c, {"filter", "dedup"}, false);
        break;
    case Stage::purge:
        c.path("train_signatures");
        c.path("test_signatures");
        file("train_signatures");
        file("test_signatures");
        in["params"] = params_digest(c, {"dedup"}, false);
        break;
    case Stage::sample:
        c.path("scores");
        file("scores");
        if (c.has("scores") && c.path("scores").extension() != ".csv") {
            auto ids = c.path("scores");
            ids += ".ids";
            in["file:scores.ids"] = sha256_file(ids);
        }
        file("exclude");
        file("truth");
        up(Stage::purge, "report.json");
        in["params"] = params_digest(c, {"sampler"}, false);
        break;
    case Stage::annotate: {
        up(Stage::sample, "selection.json");
        c.path("goldens");
        c.path("exemplars");
        c.path("confusion");
        file("goldens");
        file("exemplars");
        file("confusion");
        if (c.simulate)
            file("truth");
        else
            file("judgments");
        const fs::path store = c.output_dir / "serve" / "store";
        if (!c.simulate && !c.has("judgments") && fs::exists(store / "events.log"))
            in["serve/events.log"] = sha256_file(store / "events.log");
        in["params"] = params_digest(c, {"annotate"}, true);
        break;
    }
    case Stage::export_:
        up(Stage::filter, "filtered.jsonl");
        up(Stage::annotate, "tasks.jsonl");
        up(Stage::annotate, "outcomes.json");
        up(Stage::purge, "report.json");
        file("ground_truth");
        file("train_signatures");
        file("test_signatures");
        in["params"] = params_digest(c, {"dedup"}, false);
        break;
    case Stage::eval:
        c.path("predictions");
        file("predictions");
        file("taxonomy");
        file("taxonomy_map");
        file("worth_curve");
        in["params"] = params_digest(c, {"eval"}, false);
        break;
    }
    in["tool_version"] = sha256_hex(tool_version());
    return in;
}

void exec_ingest(const RunConfig& c, StageIo& io) {
    std::optional<CategoryList> cats;
    if (c.has("categories"))
        cats = load_categories(c.path("categories"));
    LoadOptions opts;
    opts.per_category_cap = c.per_category_cap;
    opts.categories = cats ? &*cats : nullptr;
    const SearchManifest m = load_manifest(c.path("manifest"), opts);
    std::ostringstream out;
    write_manifest(out, m);
    io.put("manifest.jsonl", out.str());
    json stats = to_json(corpus_stats(m));
    stats["dropped_over_cap"] = m.dropped_over_cap;
    io.put_json("stats.json", stats);
}

void exec_filter(const RunConfig& c, StageIo& io) {
    LoadOptions lo;
    lo.per_category_cap = 0;
    const SearchManifest m = load_manifest(upstream(c, Stage::ingest, "manifest.jsonl"), lo);
    std::optional<CategoryList> cats;
    if (c.has("categories"))
        cats = load_categories(c.path("categories"));
    std::vector<dedup::BinarySignature> sigs;
    xfilter::IdentityMode mode;
    if (c.identity == xfilter::IdentityMode::Kind::signature) {
        sigs = load_checked_signatures(c, "train_signatures");
        mode = xfilter::IdentityMode::by_signature(sigs, c.r_dup);
    }
    const auto report = xfilter::filter_cross_category(m, mode, cats ? &*cats : nullptr);
    io.put_json("report.json", xfilter::to_json(report));
    io.put("summary.txt", xfilter::summary_table(report));
    std::ostringstream out;
    write_manifest(out, xfilter::apply_filter(m, report));
    io.put("filtered.jsonl", out.str());
}

void exec_purge(const RunConfig& c, StageIo& io) {
    const auto train = load_checked_signatures(c, "train_signatures");
    const auto test = load_checked_signatures(c, "test_signatures");
    const auto report = dedup::purge_train_vs_test(train, test, c.threshold, index_options(c));
    io.put_json("report.json", dedup::to_json(report));
}

void exec_sample(const RunConfig& c, StageIo& io) {
    const auto scores = sampler::load_scores(c.path("scores"));
    const auto purge = dedup::purge_report_from_json(json::parse(read_file(upstream(c, Stage::purge, "report.json"))));
    std::set<std::string> excluded(purge.removed_ids.begin(), purge.removed_ids.end());
    if (c.has("exclude")) {
        const auto extra = load_id_list(c.path("exclude"));
        excluded.insert(extra.begin(), extra.end());
    }
    const sampler::ClassPrior prior =
        c.prior ? sampler::ClassPrior(*c.prior) : sampler::ClassPrior::uniform(scores.class_ids());
    const sampler::SamplingBudget budget{c.sampling_budget(), c.round_multiplier};
    const auto rounds = sampler::select_rounds(scores, prior, budget, excluded, c.rounds);
    json sel = json::array();
    for (const auto& r : rounds)
        sel.push_back(sampler::to_json(r));
    io.put_json("selection.json", sel);
    if (c.has("truth")) {
        const auto truth = load_truth(c.path("truth"));
        json yields = json::array();
        for (const auto& r : rounds)
            yields.push_back({{"round", r.round}, {"rows", sampler::to_json(sampler::yield_curve(r, truth))}});
        io.put_json("yield.json", yields);
    }
}

void exec_annotate(const RunConfig& c, StageIo& io) {
    std::vector<sampler::SelectionResult> selections;
    for (const auto& r : json::parse(read_file(upstream(c, Stage::sample, "selection.json"))))
        selections.push_back(sampler::selection_from_json(r));

    annotate::GoldenBank goldens;
    for_each_json_line(c.path("goldens"), [&](const json& j) {
        goldens[j.at("class_id").get<std::string>()].emplace_back(j.at("image_id").get<std::string>(),
                                                                  j.at("answer").get<bool>());
    });
    annotate::ExemplarBank exemplars;
    for_each_json_line(c.path("exemplars"), [&](const json& j) {
        exemplars[j.at("class_id").get<std::string>()].push_back(j.at("image_id").get<std::string>());
    });
    const auto confusion = evalkit::confusion_map_from_json(json::parse(read_file(c.path("confusion"))));

    annotate::BatchOptions bo;
    bo.golden_rate = c.golden_rate;
    bo.seed = c.seed;
    const auto tasks = annotate::make_batches(selections, goldens, exemplars, confusion, bo);

    std::vector<annotate::Judgment> judgments;
    if (c.simulate) {
        auto opts = *c.simulate;
        opts.seed = c.seed ^ 0x5851f42d4c957f2dULL;
        judgments = annotate::simulate_judgments(tasks, load_truth(c.path("truth")), opts);
    } else if (c.has("judgments")) {
        for_each_json_line(c.path("judgments"), [&](const json& j) { judgments.push_back(annotate::judgment_from_json(j)); });
    } else if (const fs::path store = c.output_dir / "serve" / "store"; fs::exists(store / "tasks.jsonl")) {
        annotate::AnnotationStore s(store);
        if (s.tasks() != tasks)
            throw ValidationError("annotation store at " + store.string() +
                                  " was built from different batches; move it aside to restart annotation");
        judgments = s.judgments();
    }

    std::string tasks_out, judg_out;
    for (const auto& t : tasks)
        tasks_out += annotate::to_json(t).dump() + "\n";
    for (const auto& j : judgments)
        judg_out += annotate::to_json(j).dump() + "\n";
    io.put("tasks.jsonl", tasks_out);
    io.put("judgments.jsonl", judg_out);

    const auto votes = annotate::aggregate_votes(judgments);
    io.put_json("outcomes.json", annotate::to_json(votes));
    const auto part = annotate::partition_tasks(tasks, votes);
    io.put_json("partition.json",
                {{"accepted", part.accepted}, {"rejected", part.rejected}, {"pending", part.pending}});
    json raters = json::array();
    for (const auto& s : annotate::rater_report(judgments, tasks))
        raters.push_back(annotate::to_json(s));
    io.put_json("raters.json", raters);
}

void exec_export(const RunConfig& c, StageIo& io) {
    LoadOptions lo;
    lo.per_category_cap = 0;
    const SearchManifest filtered = load_manifest(upstream(c, Stage::filter, "filtered.jsonl"), lo);
    std::vector<annotate::AnnotationTask> tasks;
    for_each_json_line(upstream(c, Stage::annotate, "tasks.jsonl"),
                       [&](const json& j) { tasks.push_back(annotate::task_from_json(j)); });
    const auto votes = annotate::aggregate_from_json(json::parse(read_file(upstream(c, Stage::annotate, "outcomes.json"))));
    const auto purge = dedup::purge_report_from_json(json::parse(read_file(upstream(c, Stage::purge, "report.json"))));
    std::optional<SearchManifest> gt;
    if (c.has("ground_truth"))
        gt = load_manifest(c.path("ground_truth"), lo);

    const auto rows = export_dataset(filtered, annotate::accepted_images(tasks, votes), purge, gt ? &*gt : nullptr);
    io.put("dataset.jsonl", export_jsonl(rows));

    Verification v;
    if (c.has("train_signatures") && c.has("test_signatures"))
        v = verify_export(rows, load_checked_signatures(c, "train_signatures"),
                          load_checked_signatures(c, "test_signatures"), c.threshold, index_options(c));
    json viol = json::array();
    for (const auto& p : v.violations)
        viol.push_back({{"image_id", p.train_id}, {"test_id", p.test_id}, {"distance", p.distance}});
    std::size_t web = 0, annotated = 0, gt_rows = 0;
    for (const auto& r : rows) {
        web += r.sources.count("web");
        annotated += r.sources.count("annotated");
        gt_rows += r.sources.count("ground_truth");
    }
    io.put_json("verification.json", {{"threshold", c.threshold},
                                      {"rows", rows.size()},
                                      {"web", web},
                                      {"annotated", annotated},
                                      {"ground_truth", gt_rows},
                                      {"checked", v.checked},
                                      {"unverified", v.unverified},
                                      {"violations", viol}});
    if (!v.violations.empty())
        throw Error("post-export verification failed: " + std::to_string(v.violations.size()) +
                    " exported images lie within the purge threshold of a test image");
}

evalkit::WorthCurve load_worth_curve(const fs::path& path) {
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open " + path.string());
    evalkit::WorthCurve curve;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto t = text::trim(line);
        if (t.empty() || t[0] == '#' || (lineno == 1 && !std::isdigit(static_cast<unsigned char>(t[0]))))
            continue;
        const auto comma = t.find(',');
        if (comma == std::string::npos)
            throw ParseError(path.string(), lineno, "expected web_images,accuracy");
        try {
            curve.points.emplace_back(std::stod(t.substr(0, comma)), std::stod(t.substr(comma + 1)));
        } catch (const std::exception&) {
            throw ParseError(path.string(), lineno, "expected two numbers");
        }
    }
    return curve;
}

void exec_eval(const RunConfig& c, StageIo& io) {
    const auto preds = evalkit::load_predictions(c.path("predictions"));
    json report = {{"rows", preds.size()}, {"classes", preds.classes().size()}};
    auto wants = [&](const char* m) { return std::find(c.metrics.begin(), c.metrics.end(), m) != c.metrics.end(); };
    if (wants("top1"))
        report["top1_accuracy"] = evalkit::top1_accuracy(preds);
    if (wants("map"))
        report["mean_ap"] = evalkit::to_json(evalkit::mean_ap(preds));
    if (wants("confusion")) {
        const auto m = evalkit::confusion_matrix(preds, false);
        io.put_json("confusion.json", evalkit::to_json(m));
        io.put("confusion.tsv", evalkit::confusion_table(evalkit::confusion_matrix(preds, true)));
        io.put_json("confusion_top2.json", evalkit::confusion_map_to_json(m.top_confused(2)));
    }
    if (wants("lca")) {
        std::optional<fs::path> map;
        if (c.has("taxonomy_map"))
            map = c.path("taxonomy_map");
        const auto h = evalkit::lca_histogram(preds, evalkit::load_taxonomy(c.path("taxonomy"), map));
        report["lca_histogram"] = evalkit::to_json(h);
        io.put("lca.csv", evalkit::histogram_csv(h));
    }
    if (wants("worth")) {
        auto curve = load_worth_curve(c.path("worth_curve"));
        const json& ev = c.raw.at("eval");
        if (!ev.contains("gt_size") || !ev.contains("gt_accuracy"))
            throw ValidationError("config: the worth metric needs eval.gt_size and eval.gt_accuracy");
        curve.gt_size = ev.at("gt_size").get<double>();
        curve.gt_accuracy = ev.at("gt_accuracy").get<double>();
        report["worth"] = evalkit::to_json(evalkit::worth_estimate(curve));
        io.put("worth.csv", evalkit::curve_csv(curve));
    }
    io.put_json("report.json", report);
}

bool outputs_intact(const fs::path& dir, const RunArtifact& a) {
    for (const auto& [name, digest] : a.outputs)
        if (!fs::exists(dir / name) || sha256_file(dir / name) != digest)
            return false;
    return true;
}

RunArtifact run_stage(const RunConfig& c, Stage s, bool force) {
    const fs::path dir = stage_dir(c, s);
    const auto inputs = stage_inputs(c, s);
    const fs::path artifact_path = dir / "artifact.json";
    if (!force && fs::exists(artifact_path)) {
        try {
            RunArtifact prev = artifact_from_json(json::parse(read_file(artifact_path)));
            if (prev.inputs == inputs && outputs_intact(dir, prev)) {
                prev.skipped = true;
                return prev;
            }
        } catch (const json::exception&) {
            // unreadable record: rerun
        }
    }

    const auto start = Clock::now();
    StageIo io{dir, {}};
    switch (s) {
    case Stage::ingest: exec_ingest(c, io); break;
    case Stage::filter: exec_filter(c, io); break;
    case Stage::purge: exec_purge(c, io); break;
    case Stage::sample: exec_sample(c, io); break;
    case Stage::annotate: exec_annotate(c, io); break;
    case Stage::export_: exec_export(c, io); break;
    case Stage::eval: exec_eval(c, io); break;
    }

    RunArtifact a;
    a.stage = stage_name(s);
    a.inputs = inputs;
    a.tool_version = tool_version();
    fs::create_directories(dir);
    fs::remove(artifact_path);
    for (const auto& [name, bytes] : io.files) {
        write_file_atomic(dir / name, bytes);
        a.outputs[name] = sha256_hex(bytes);
    }
    a.wall_seconds = std::chrono::duration<double>(Clock::now() - start).count();
    write_file_atomic(artifact_path, to_json(a).dump(2) + "\n");
    return a;
}

} // namespace

std::vector<RunArtifact> run(const RunConfig& config, const std::set<Stage>& stages, bool force) {
    std::vector<RunArtifact> out;
    for (Stage s : stages) // std::set<Stage> iterates in dependency order
        out.push_back(run_stage(config, s, force));
    return out;
}

void serve(const RunConfig& config, const std::function<void(int)>& on_ready, const fs::path& static_dir) {
    const fs::path tasks_path = upstream(config, Stage::annotate, "tasks.jsonl");
    const fs::path store_dir = config.output_dir / "serve" / "store";
    if (!fs::exists(store_dir / "tasks.jsonl")) {
        std::vector<annotate::AnnotationTask> tasks;
        for_each_json_line(tasks_path, [&](const json& j) { tasks.push_back(annotate::task_from_json(j)); });
        annotate::AnnotationStore::initialize(store_dir, tasks);
    }
    annotate::StoreOptions opts;
    if (config.has("manifest")) {
        LoadOptions lo;
        lo.per_category_cap = 0;
        for (const auto& r : load_manifest(config.path("manifest"), lo).records)
            if (!r.url.empty())
                opts.urls.emplace(r.image_id, r.url);
    }
    if (config.has("categories"))
        for (const auto& cat : load_categories(config.path("categories")).all())
            opts.class_names.emplace(cat.id, cat.display_name);
    annotate::AnnotationStore store(store_dir, opts);
    annotate::AnnotationService service(store);
    if (!static_dir.empty())
        service.set_static_dir(static_dir);
    const int port = service.bind(config.host, config.port);
    if (on_ready)
        on_ready(port);
    service.listen();
}

} // namespace curator::pipeline
