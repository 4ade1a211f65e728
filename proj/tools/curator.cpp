#include "curator/catalog.hpp"
#include "curator/dedup.hpp"
#include "curator/digest.hpp"
#include "curator/error.hpp"
#include "curator/evalkit.hpp"
#include "curator/pipeline.hpp"
#include "curator/synth.hpp"
#include "curator/text.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace curator;

namespace {

struct Globals {
    std::string config = "config.json";
    std::optional<std::uint64_t> seed;
    std::string out;
    bool force = false;
    std::vector<std::string> overrides;
};

pipeline::RunConfig load_config(const Globals& g) {
    const fs::path path = g.config;
    if (!fs::exists(path))
        throw ValidationError("config file " + path.string() + " does not exist");
    json doc = pipeline::load_config_document(path);
    for (const auto& o : g.overrides)
        pipeline::apply_override(doc, o);
    if (g.seed)
        doc["seed"] = *g.seed;
    if (!g.out.empty())
        doc["output_dir"] = fs::absolute(g.out).string();
    return pipeline::RunConfig::from_json(doc, fs::absolute(path).parent_path());
}

void report(const std::vector<pipeline::RunArtifact>& arts) {
    for (const auto& a : arts) {
        if (a.skipped)
            std::printf("%-9s up to date\n", a.stage.c_str());
        else
            std::printf("%-9s ran in %.3fs (%zu outputs)\n", a.stage.c_str(), a.wall_seconds, a.outputs.size());
    }
}

void run_stages(const Globals& g, std::set<pipeline::Stage> stages) {
    report(pipeline::run(load_config(g), stages, g.force));
}

void emit(const std::string& out, const std::string& text) {
    if (out.empty() || out == "-")
        std::cout << text;
    else
        write_file_atomic(out, text);
}

std::map<std::string, evalkit::NoiseLabel> load_audit_labels(const fs::path& path) {
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open " + path.string());
    std::map<std::string, evalkit::NoiseLabel> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto t = text::trim(line);
        if (t.empty() || t[0] == '#')
            continue;
        const auto tab = t.find('\t');
        if (tab == std::string::npos)
            throw ParseError(path.string(), lineno, "expected image_id<TAB>in_domain|cross_domain");
        const auto label = text::trim(t.substr(tab + 1));
        if (label == "in_domain")
            out[t.substr(0, tab)] = evalkit::NoiseLabel::in_domain;
        else if (label == "cross_domain")
            out[t.substr(0, tab)] = evalkit::NoiseLabel::cross_domain;
        else
            throw ParseError(path.string(), lineno, "unknown label '" + label + "'");
    }
    return out;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"curator: build and evaluate webly-supervised fine-grained datasets"};
    app.require_subcommand(1);
    app.set_version_flag("--version", pipeline::tool_version());

    Globals g;
    app.add_option("--config", g.config, "Run configuration (JSON)");
    app.add_option("--seed", g.seed, "Override the configured seed");
    app.add_option("--out", g.out, "Override the output directory");
    app.add_flag("--force", g.force, "Rerun stages even when their inputs are unchanged");
    app.add_option("--set", g.overrides, "Override a config value, e.g. --set dedup.threshold=16");
    app.fallthrough();

    // Pipeline stages.
    auto* run = app.add_subcommand("run", "Run pipeline stages in order (default: all dataset stages)");
    std::vector<std::string> run_stage_names;
    bool with_eval = false;
    run->add_option("--stages", run_stage_names, "Stages to run")->delimiter(',');
    run->add_flag("--eval", with_eval, "Also run the eval stage");
    run->callback([&] {
        std::set<pipeline::Stage> stages;
        if (run_stage_names.empty())
            for (auto s : pipeline::dataset_stages())
                stages.insert(s);
        for (const auto& s : run_stage_names)
            stages.insert(pipeline::parse_stage(s));
        if (with_eval)
            stages.insert(pipeline::Stage::eval);
        run_stages(g, stages);
    });

    auto* ingest = app.add_subcommand("ingest", "Load and cap the search manifest, or build a Flickr eval set");
    std::string flickr, categories_path, ingest_out;
    std::size_t cap = 25;
    ingest->add_option("--flickr", flickr, "Candidate records with titles (JSONL or TSV)");
    ingest->add_option("--categories", categories_path, "Category list used to match titles");
    ingest->add_option("--cap", cap, "Images per category for the Flickr eval set");
    ingest->add_option("-o,--output", ingest_out, "Where to write the Flickr eval manifest (default stdout)");
    ingest->callback([&] {
        if (flickr.empty()) {
            run_stages(g, {pipeline::Stage::ingest});
            return;
        }
        if (categories_path.empty())
            throw ValidationError("--flickr needs --categories");
        LoadOptions lo;
        lo.per_category_cap = 0;
        const auto candidates = load_manifest(flickr, lo);
        const auto result = build_flickr_eval(candidates.records, load_categories(categories_path), cap);
        std::ostringstream out;
        write_manifest(out, result.manifest);
        emit(ingest_out, out.str());
        std::fprintf(stderr, "kept %zu; dropped: missing title %zu, unknown category %zu, title mismatch %zu, over cap %zu\n",
                     result.manifest.records.size(), result.missing_title, result.unknown_category,
                     result.title_mismatch, result.over_cap);
    });

    auto* filter = app.add_subcommand("filter", "Remove images returned for two or more categories");
    filter->callback([&] { run_stages(g, {pipeline::Stage::filter}); });

    auto* sample = app.add_subcommand("sample", "Select images for annotation");
    sample->callback([&] { run_stages(g, {pipeline::Stage::sample}); });

    auto* annotate = app.add_subcommand("annotate", "Batch selections and aggregate judgments");
    annotate->callback([&] { run_stages(g, {pipeline::Stage::annotate}); });

    auto* export_ = app.add_subcommand("export", "Write the final dataset and verify it against the test set");
    export_->callback([&] { run_stages(g, {pipeline::Stage::export_}); });

    auto* eval = app.add_subcommand("eval", "Score predictions: top-1, mAP, confusion, LCA, worth");
    eval->callback([&] { run_stages(g, {pipeline::Stage::eval}); });

    auto* serve = app.add_subcommand("serve", "Serve annotation batches over HTTP");
    std::string static_dir;
    std::optional<int> port;
    serve->add_option("--port", port, "Port (0 picks a free one)");
    serve->add_option("--static", static_dir, "Directory with the annotation UI");
    serve->callback([&] {
        auto cfg = load_config(g);
        if (port)
            cfg.port = *port;
        pipeline::serve(
            cfg, [&](int p) { std::printf("listening on http://%s:%d\n", cfg.host.c_str(), p), std::fflush(stdout); },
            static_dir);
    });

    // Dedup tools.
    auto* dedup_cmd = app.add_subcommand("dedup", "Near-duplicate search over binary signatures");
    dedup_cmd->require_subcommand(1);
    auto* purge = dedup_cmd->add_subcommand("purge", "Run the purge stage");
    purge->callback([&] { run_stages(g, {pipeline::Stage::purge}); });

    std::string sig_path;
    std::size_t chunks = 0, max_radius = 18;
    auto* build = dedup_cmd->add_subcommand("build", "Index signatures and print index statistics");
    build->add_option("--signatures", sig_path, "Signature file")->required();
    build->add_option("--chunks", chunks, "Number of chunks (0 picks a default)");
    build->add_option("--max-radius", max_radius, "Largest supported query radius");
    build->callback([&] {
        const dedup::DedupIndex index(dedup::load_signatures(sig_path), {chunks, max_radius});
        std::cout << json{{"signatures", index.size()},
                          {"width", index.width()},
                          {"chunks", index.chunks()},
                          {"chunk_bits", index.chunk_bits()},
                          {"max_radius", index.max_radius()}}
                         .dump(2)
                  << '\n';
    });

    std::string probe_hex;
    std::size_t radius = 18;
    auto* query = dedup_cmd->add_subcommand("query", "List signatures within a radius of a probe");
    query->add_option("--signatures", sig_path, "Signature file")->required();
    query->add_option("--probe", probe_hex, "Probe signature in hex")->required();
    query->add_option("-r,--radius", radius, "Hamming radius");
    query->add_option("--chunks", chunks, "Number of chunks (0 picks a default)");
    query->add_option("--max-radius", max_radius, "Largest supported query radius");
    query->callback([&] {
        const dedup::DedupIndex index(dedup::load_signatures(sig_path), {chunks, std::max(max_radius, radius)});
        json hits = json::array();
        for (const auto& m : index.query_radius(dedup::BinarySignature::from_hex("probe", probe_hex), radius))
            hits.push_back({{"image_id", m.image_id}, {"distance", m.distance}});
        std::cout << hits.dump(2) << '\n';
    });

    // Noise audits.
    auto* audit = app.add_subcommand("audit", "Estimate cross-domain noise from a manual audit");
    audit->require_subcommand(1);
    std::string manifest_path, audit_path, labels_path, audit_out;
    std::size_t audit_n = 100;
    auto* audit_sample = audit->add_subcommand("sample", "Draw a seeded audit sample");
    audit_sample->add_option("--manifest", manifest_path, "Search manifest")->required();
    audit_sample->add_option("-n", audit_n, "Sample size");
    audit_sample->add_option("-o,--output", audit_out, "Audit file (default stdout)");
    audit_sample->callback([&] {
        LoadOptions lo;
        lo.per_category_cap = 0;
        const auto a = evalkit::audit_sample(load_manifest(manifest_path, lo), audit_n, g.seed.value_or(0));
        emit(audit_out, evalkit::to_json(a).dump(2) + "\n");
    });
    auto* audit_score = audit->add_subcommand("score", "Score a completed audit");
    audit_score->add_option("--audit", audit_path, "Audit file from 'audit sample'")->required();
    audit_score->add_option("--labels", labels_path, "image_id<TAB>in_domain|cross_domain")->required();
    audit_score->add_option("-o,--output", audit_out, "Scored audit (default stdout)");
    audit_score->callback([&] {
        auto a = evalkit::audit_from_json(json::parse(read_file(audit_path)));
        evalkit::complete_audit(a, load_audit_labels(labels_path));
        emit(audit_out, evalkit::to_json(a).dump(2) + "\n");
    });

    auto* synth = app.add_subcommand("synth", "Write a small synthetic corpus with a ready config.json");
    std::string synth_dir;
    synth::SynthOptions so;
    synth->add_option("dir", synth_dir, "Output directory")->required();
    synth->add_option("--classes", so.classes, "Number of classes");
    synth->callback([&] {
        if (g.seed)
            so.seed = *g.seed;
        synth::write_corpus(synth_dir, so);
        std::printf("wrote %s\n", (fs::path(synth_dir) / "config.json").string().c_str());
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const ValidationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const nlohmann::json::exception& e) {
        std::fprintf(stderr, "error: malformed input: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
