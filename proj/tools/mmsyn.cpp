// mmsyn: dataset preparation, phantom generation, training, inference and
// evaluation for missing-modality MRI synthesis.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mmsyn/config.hpp"
#include "mmsyn/dataio.hpp"
#include "mmsyn/errors.hpp"
#include "mmsyn/evalrep.hpp"
#include "mmsyn/infer.hpp"
#include "mmsyn/nifti.hpp"
#include "mmsyn/phantom.hpp"
#include "mmsyn/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mmsyn;

namespace {

struct ConfigArgs {
    std::optional<std::string> config;
    std::optional<std::string> profile;
    std::vector<std::string> sets;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config, "JSON run configuration file");
        cmd->add_option("--profile", profile, "desk or paper (overrides the file's profile)");
        cmd->add_option("--set", sets, "override one field, e.g. --set loss.alpha=0.2 (repeatable)");
        cmd->footer(schema_help());
    }

    RunConfig load() const {
        std::optional<fs::path> path;
        if (config) path = *config;
        std::optional<Profile> p;
        if (profile) p = parse_profile(*profile);
        return load_run_config(path, p, sets);
    }
};

// `<dir>/<stem>.nii.gz`, falling back to `.nii`.
fs::path existing_nifti(const fs::path& gz_path) {
    if (fs::exists(gz_path)) return gz_path;
    fs::path plain = gz_path;
    plain.replace_extension();  // strip .gz
    if (fs::exists(plain)) return plain;
    return gz_path;
}

std::optional<fs::path> optional_nifti(const fs::path& gz_path) {
    const fs::path p = existing_nifti(gz_path);
    if (fs::exists(p)) return p;
    return std::nullopt;
}

void print_warnings(const DatasetManifest& manifest) {
    for (const auto& w : manifest.warnings)
        std::cerr << "warning: subject " << w.subject_id << ": " << w.message << "\n";
}

DatasetManifest resolve_manifest(const RunConfig& cfg) {
    if (!cfg.manifest.empty() && fs::exists(cfg.manifest)) return load_manifest(cfg.manifest);
    if (cfg.data_root.empty()) throw ConfigError("data.root: no data root given (use --data-root or MMSYN_DATA_ROOT)");
    if (!fs::is_directory(cfg.data_root)) throw DataError("data root " + cfg.data_root.string() + " does not exist");
    auto manifest = build_manifest(cfg.data_root);
    print_warnings(manifest);
    if (manifest.entries.empty()) throw DataError("no complete subjects under " + cfg.data_root.string());
    return manifest;
}

int cmd_prepare(const ConfigArgs& args, const std::optional<std::string>& data_root, const std::string& out) {
    RunConfig cfg = args.load();
    if (data_root) cfg.data_root = *data_root;
    if (cfg.data_root.empty()) throw ConfigError("data.root: no data root given (use --data-root or MMSYN_DATA_ROOT)");
    if (!fs::is_directory(cfg.data_root)) throw DataError("data root " + cfg.data_root.string() + " does not exist");
    const auto manifest = build_manifest(cfg.data_root);
    print_warnings(manifest);
    const fs::path out_path = out.empty() ? cfg.data_root / "manifest.jsonl" : fs::path(out);
    if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
    save_manifest(manifest, out_path);
    std::cout << manifest.entries.size() << " slices, " << manifest.tumor_count() << " tumor slices\n";
    std::cout << "manifest: " << out_path.string() << "\n";
    return 0;
}

struct PhantomArgs {
    std::optional<int> subjects;
    std::optional<std::int64_t> hw;
    std::optional<std::int64_t> depth;
    std::optional<std::uint64_t> seed;
    std::string out;
};

int cmd_phantom(const ConfigArgs& args, const PhantomArgs& p) {
    RunConfig cfg = args.load();
    if (p.subjects) cfg.phantom.subjects = *p.subjects;
    if (p.hw) cfg.phantom.hw = *p.hw;
    if (p.depth) cfg.phantom.depth = *p.depth;
    if (p.seed) cfg.phantom.seed = *p.seed;
    if (cfg.phantom.subjects < 1) throw ConfigError("phantom.subjects: must be >= 1");
    if (cfg.phantom.hw < 16) throw ConfigError("phantom.hw: must be >= 16");
    if (cfg.phantom.depth < 1) throw ConfigError("phantom.depth: must be >= 1");
    const auto dirs =
        make_phantom_dataset(p.out, cfg.phantom.subjects, cfg.phantom.hw, cfg.phantom.depth, cfg.phantom.seed);
    std::cout << dirs.size() << " phantom subjects (" << cfg.phantom.hw << "x" << cfg.phantom.hw << "x"
              << cfg.phantom.depth << ") in " << p.out << "\n";
    return 0;
}

int exit_code_of(const std::exception_ptr& failure);

struct TrainArgs {
    std::optional<std::string> scenario;
    bool all = false;
    std::optional<std::string> data_root;
    std::optional<std::string> manifest;
    std::optional<std::string> out;
    bool fit = false;
};

int cmd_train(const ConfigArgs& args, const TrainArgs& t) {
    RunConfig cfg = args.load();
    if (t.data_root) cfg.data_root = *t.data_root;
    if (t.manifest) cfg.manifest = *t.manifest;
    if (t.out) cfg.output_dir = *t.out;
    if (t.scenario) cfg.train.scenario = MissingScenario::for_target(parse_modality(*t.scenario));

    std::vector<Modality> targets;
    if (t.all) targets.assign(kAllModalities.begin(), kAllModalities.end());
    else targets.push_back(cfg.train.scenario.target);

    SliceDataset dataset(resolve_manifest(cfg));
    if (dataset.manifest().tumor_count() == 0) throw DataError("dataset has no tumor-containing slices");
    fs::create_directories(cfg.output_dir);
    {
        std::ofstream f(cfg.output_dir / "run_config.json");
        f << to_json(cfg).dump(2) << "\n";
    }
    std::cout << dataset.manifest().entries.size() << " slices, " << dataset.manifest().tumor_count()
              << " tumor slices; training " << targets.size() << " scenario(s) into " << cfg.output_dir.string()
              << "\n";

    auto runs = train_all_scenarios(cfg.train, dataset, cfg.output_dir, targets);

    json summary = {{"profile", profile_name(cfg.profile)}, {"config", to_json(cfg)}, {"runs", json::array()}};
    std::exception_ptr first_failure;
    for (auto& run : runs) {
        json r = {{"scenario", run.scenario.tag()}, {"checkpoint", run.checkpoint.string()}};
        if (run.model) {
            auto& m = *run.model;
            r["sr_steps"] = m.sr_log.records.size();
            r["translation_steps"] = m.log.records.size();
            r["sr_target"] = m.sr_log.records.empty() ? "" : m.sr_log.records.back().target;
            if (!m.log.records.empty()) r["final_breakdown"] = m.log.records.back().breakdown.to_json();
            if (t.fit) {
                const auto fit = fit_report(m, dataset);
                r["fit"] = {{"mean_ssim", fit.mean_ssim}, {"tumor_dice", fit.tumor_dice}, {"slices", fit.slices}};
                std::cout << run.scenario.tag() << ": SSIM " << fit.mean_ssim << ", tumor Dice " << fit.tumor_dice
                          << " over " << fit.slices << " tumor slices\n";
            }
            std::cout << run.scenario.tag() << ": " << run.checkpoint.string() << "\n";
        } else {
            r["error"] = run.error;
            std::cerr << "error: scenario " << run.scenario.tag() << ": " << run.error << "\n";
            if (!first_failure) first_failure = run.failure;
        }
        summary["runs"].push_back(std::move(r));
    }
    std::ofstream(cfg.output_dir / "run_summary.json") << summary.dump(2) << "\n";
    return first_failure ? exit_code_of(first_failure) : 0;
}

struct InferArgs {
    std::string checkpoint;
    std::optional<std::string> subject_dir;
    std::vector<std::string> sources;
    std::optional<std::string> subject;
    std::string out;
    std::int64_t slices_per_batch = 8;
};

int cmd_infer(const InferArgs& a) {
    ScenarioModel model = load_scenario_model(a.checkpoint);
    const auto& expected = model.scenario.sources;
    auto expected_list = [&] {
        std::string s;
        for (Modality m : expected) s += (s.empty() ? "" : ", ") + std::string(modality_tag(m));
        return s;
    };

    std::map<Modality, fs::path> given;
    std::string subject;
    if (a.subject_dir) {
        const fs::path dir = *a.subject_dir;
        subject = a.subject.value_or(dir.filename().string());
        for (Modality m : expected) given[m] = existing_nifti(modality_path(dir, subject, m));
    } else {
        for (const auto& item : a.sources) {
            const auto eq = item.find('=');
            if (eq == std::string::npos) throw ConfigError("--source expects MODALITY=PATH, got '" + item + "'");
            given[parse_modality(item.substr(0, eq))] = item.substr(eq + 1);
        }
        if (a.subject) {
            subject = *a.subject;
        } else if (!given.empty()) {
            const std::string name = given.begin()->second.filename().string();
            subject = name.substr(0, name.rfind('_'));
        }
    }

    std::set<Modality> have;
    for (const auto& [m, p] : given) have.insert(m);
    if (have != std::set<Modality>(expected.begin(), expected.end())) {
        std::string got;
        for (Modality m : have) got += (got.empty() ? "" : ", ") + std::string(modality_tag(m));
        throw DataError("checkpoint scenario " + model.scenario.tag() + " expects sources " + expected_list() +
                        "; got " + (got.empty() ? "none" : got));
    }

    std::array<Volume3D, 3> volumes;
    for (std::size_t i = 0; i < 3; ++i) {
        volumes[i] = nifti::read_volume(given.at(expected[i]), expected[i]);
        volumes[i].subject_id = subject;
    }
    auto result = synthesize_volume(model, volumes, a.slices_per_batch);
    result.provenance.checkpoint = fs::absolute(a.checkpoint).string();
    fs::create_directories(a.out);
    write_result(result, a.out);
    std::cout << synthesized_path(a.out, subject, model.scenario.target).string() << "\n";
    return 0;
}

int cmd_eval(const std::string& real_root, const std::string& syn_root, const std::string& out_prefix) {
    if (!fs::is_directory(real_root)) throw DataError("real root " + real_root + " does not exist");
    if (!fs::is_directory(syn_root)) throw DataError("synthetic root " + syn_root + " does not exist");

    // target -> subject -> synthetic file
    std::map<Modality, std::map<std::string, fs::path>> found;
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(syn_root))
        if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& path : files) {
        std::string name = path.filename().string();
        for (const std::string ext : {".nii.gz", ".nii"}) {
            if (name.size() > ext.size() && name.ends_with(ext)) {
                name.resize(name.size() - ext.size());
                break;
            }
        }
        if (!name.ends_with("-syn")) continue;
        name.resize(name.size() - 4);
        const auto us = name.rfind('_');
        if (us == std::string::npos) continue;
        const std::string tag = name.substr(us + 1);
        if (tag == "seg") continue;
        Modality target;
        try {
            target = parse_modality(tag);
        } catch (const ConfigError&) {
            continue;
        }
        found[target].emplace(name.substr(0, us), path);
    }
    if (found.empty()) throw DataError("no synthesized volumes (*-syn.nii.gz) under " + syn_root);

    std::vector<std::string> real_subjects;
    for (const auto& e : fs::directory_iterator(real_root))
        if (e.is_directory()) real_subjects.push_back(e.path().filename().string());
    std::sort(real_subjects.begin(), real_subjects.end());

    std::vector<std::string> missing;
    std::vector<ScenarioReport> reports;
    for (const auto& [target, subjects] : found) {
        ScenarioReport report;
        report.target = target;
        for (const auto& subject : real_subjects)
            if (!subjects.count(subject))
                missing.push_back(subject + " " + std::string(modality_tag(target)) + ": no synthesized volume");
        for (const auto& [subject, syn_path] : subjects) {
            const fs::path dir = fs::path(real_root) / subject;
            const auto real_path = optional_nifti(modality_path(dir, subject, target));
            if (!real_path) {
                missing.push_back(subject + " " + std::string(modality_tag(target)) + ": no real volume");
                continue;
            }
            const Volume3D real = nifti::read_volume(*real_path, target);
            const Volume3D syn = nifti::read_volume(syn_path, target);
            std::optional<SegVolume3D> truth, predicted;
            if (auto p = optional_nifti(segmentation_path(dir, subject))) truth = nifti::read_segmentation(*p);
            if (auto p = optional_nifti(synthesized_seg_path(syn_path.parent_path(), subject)))
                predicted = nifti::read_segmentation(*p);
            auto scores = evaluate_subject(real, syn, truth ? &*truth : nullptr, predicted ? &*predicted : nullptr);
            scores.subject_id = subject;
            report.subjects.push_back(std::move(scores));
        }
        reports.push_back(std::move(report));
    }

    const fs::path prefix = out_prefix;
    if (prefix.has_parent_path()) fs::create_directories(prefix.parent_path());
    emit_report(reports, prefix);
    std::ifstream table(prefix.string() + ".txt");
    std::cout << table.rdbuf();
    for (const auto& m : missing) std::cerr << "missing pair: " << m << "\n";
    if (!missing.empty()) {
        std::cerr << missing.size() << " missing pair(s); partial report written\n";
        return 2;
    }
    return 0;
}

int exit_code_of(const std::exception_ptr& failure) {
    try {
        std::rethrow_exception(failure);
    } catch (const ConfigError&) {
        return 1;
    } catch (const DataError&) {
        return 2;
    } catch (const NumericalError&) {
        return 3;
    } catch (...) {
        return 2;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Missing-modality MRI synthesis: prepare, phantom, train, infer, eval"};
    app.require_subcommand(1);

    ConfigArgs prep_cfg, phantom_cfg, train_cfg;

    auto* prepare = app.add_subcommand("prepare", "scan a data root and write the slice manifest");
    std::optional<std::string> prep_root;
    std::string prep_out;
    prep_cfg.attach(prepare);
    prepare->add_option("--data-root", prep_root, "directory of subject folders");
    prepare->add_option("--out", prep_out, "manifest path (default <data-root>/manifest.jsonl)");

    auto* phantom = app.add_subcommand("phantom", "write a synthetic multi-modal phantom corpus");
    PhantomArgs ph;
    phantom_cfg.attach(phantom);
    phantom->add_option("--out", ph.out, "output directory")->required();
    phantom->add_option("--subjects", ph.subjects, "number of subjects");
    phantom->add_option("--hw", ph.hw, "in-plane size");
    phantom->add_option("--depth", ph.depth, "axial slices");
    phantom->add_option("--seed", ph.seed, "generator seed");

    auto* train = app.add_subcommand("train", "train one missing-modality scenario or all four");
    TrainArgs tr;
    train_cfg.attach(train);
    auto* scen = train->add_option("--scenario", tr.scenario, "missing target modality (t1, t1ce, t2, flair)");
    train->add_flag("--all", tr.all, "train all four scenarios (one dedicated model each)")->excludes(scen);
    train->add_option("--data-root", tr.data_root, "directory of subject folders");
    train->add_option("--manifest", tr.manifest, "manifest written by prepare");
    train->add_option("--out", tr.out, "output directory for checkpoints and logs");
    train->add_flag("--fit-report", tr.fit, "score each model on its tumor training slices");

    auto* infer = app.add_subcommand("infer", "synthesize the missing modality of one subject");
    InferArgs in;
    infer->add_option("--checkpoint", in.checkpoint, "scenario checkpoint")->required();
    auto* sdir = infer->add_option("--subject-dir", in.subject_dir, "subject folder holding the source volumes");
    infer->add_option("--source", in.sources, "MODALITY=PATH, one per source (repeatable)")->excludes(sdir);
    infer->add_option("--subject", in.subject, "subject id (default from the folder or file names)");
    infer->add_option("--out", in.out, "output directory")->required();
    infer->add_option("--slices-per-batch", in.slices_per_batch, "slices per forward pass")->check(CLI::PositiveNumber);

    auto* eval = app.add_subcommand("eval", "score synthesized volumes against the real ones");
    std::string real_root, syn_root, eval_out;
    eval->add_option("--real-root", real_root, "directory of real subject folders")->required();
    eval->add_option("--syn-root", syn_root, "directory searched recursively for *-syn volumes")->required();
    eval->add_option("--out", eval_out, "report prefix; writes <prefix>.txt and <prefix>.jsonl")->required();

    // Set last: subcommands copy the parent's footer when they are created.
    app.footer(schema_help());
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (*prepare) return cmd_prepare(prep_cfg, prep_root, prep_out);
        if (*phantom) return cmd_phantom(phantom_cfg, ph);
        if (*train) return cmd_train(train_cfg, tr);
        if (*infer) {
            if (!in.subject_dir && in.sources.empty()) throw ConfigError("infer: give --subject-dir or --source");
            return cmd_infer(in);
        }
        if (*eval) return cmd_eval(real_root, syn_root, eval_out);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
