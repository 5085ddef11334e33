// tcmkd command-line tool: reproducible ingest / train / distill / transfer /
// score / report runs over vibration recordings. All randomness flows from
// --seed; identical invocations produce byte-identical outputs.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "tcmkd/dataset_store.hpp"
#include "tcmkd/io.hpp"
#include "tcmkd/model.hpp"
#include "tcmkd/signal.hpp"
#include "tcmkd/train.hpp"
#include "tcmkd/transfer.hpp"
#include "tcmkd/version.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace tcmkd;

namespace {

void print_warnings(const std::vector<std::string>& warnings) {
    for (const std::string& w : warnings) std::cerr << "warning: " << w << "\n";
}

// Manifest written before any long-running work so a run directory is
// always re-executable from its record.
void write_manifest(const fs::path& out_dir, const std::string& command,
                    const std::map<std::string, std::string>& config, const std::vector<fs::path>& inputs,
                    const std::vector<std::string>& outputs, uint64_t seed) {
    json inputs_json = json::array();
    for (const fs::path& p : inputs)
        inputs_json.push_back({{"path", p.string()}, {"crc32", crc32_file(p)}});
    json manifest = {
        {"command", command}, {"version", kVersion},        {"seed", seed},
        {"config", config},   {"inputs", inputs_json},      {"outputs", outputs},
    };
    fs::create_directories(out_dir);
    write_text_file(out_dir / "manifest.json", manifest.dump(2) + "\n");
}

std::map<std::string, std::string> collect_config(const CLI::App* cmd) {
    std::map<std::string, std::string> out;
    for (const CLI::Option* opt : cmd->get_options()) {
        const std::string name = opt->get_single_name();
        if (name == "help" || name == "config") continue;
        if (opt->get_expected_max() == 0) { // flag
            out[name] = opt->count() > 0 ? "true" : "false";
            continue;
        }
        if (!opt->results().empty()) {
            std::string joined;
            for (const std::string& r : opt->results()) joined += (joined.empty() ? "" : ",") + r;
            out[name] = joined;
        } else if (!opt->get_default_str().empty()) {
            out[name] = opt->get_default_str();
        }
    }
    return out;
}

std::vector<std::vector<Segment>> segment_all(const std::vector<Recording>& recordings, double overlap,
                                              std::array<int, kNumChannels> channels) {
    std::vector<std::vector<Segment>> per_recording;
    per_recording.reserve(recordings.size());
    for (const Recording& rec : recordings)
        per_recording.push_back(segment_recording(rec, kSegmentLen, overlap, channels));
    return per_recording;
}

// --- synth -------------------------------------------------------------------

struct SynthArgs {
    std::string out_dir;
    uint64_t seed = 0;
    int num_classes = 4;
    int recordings_per_class = 10;
    int64_t length = 24576;
    uint32_t rate = 25000;
    double noise = 0.2;
    double mod_depth = 0.5;
    double jitter = 0.01;
    std::vector<double> carriers;
    std::vector<double> mod_periods;
};

int run_synth(const SynthArgs& a, const CLI::App* cmd) {
    SynthSpec spec = SynthSpec::confusable_pairs_default();
    spec.num_classes = a.num_classes;
    spec.recordings_per_class = a.recordings_per_class;
    spec.recording_len = a.length;
    spec.sample_rate_hz = a.rate;
    spec.noise_level = a.noise;
    spec.mod_depth = a.mod_depth;
    spec.carrier_phase_jitter = a.jitter;
    if (!a.carriers.empty()) spec.carrier_freqs = a.carriers;
    if (!a.mod_periods.empty()) spec.mod_period_segments = a.mod_periods;

    const std::vector<Recording> recordings = synth_generate(spec, a.seed);
    fs::create_directories(a.out_dir);
    std::vector<std::string> outputs;
    for (const Recording& rec : recordings) {
        const fs::path path = fs::path(a.out_dir) / (rec.id + ".traw");
        write_traw(path, rec);
        outputs.push_back(path.string());
    }
    write_manifest(a.out_dir, "synth", collect_config(cmd), {}, outputs, a.seed);
    std::cout << "recordings: " << recordings.size() << " (" << spec.num_classes << " classes x "
              << spec.recordings_per_class << ", " << spec.recording_len << " samples)\n";
    return 0;
}

// --- convert -----------------------------------------------------------------

int run_convert(const std::string& input, const std::string& output, uint32_t rate, int label) {
    Recording rec = load_recording_csv(input, rate, label);
    write_traw(output, rec);
    std::cout << "converted " << input << " -> " << output << " (" << rec.channels << " ch x " << rec.samples
              << " samples)\n";
    return 0;
}

// --- ingest ------------------------------------------------------------------

struct IngestArgs {
    std::vector<std::string> inputs;
    std::string out_dir;
    double train_fraction = 0.8;
    double overlap = 0.5;
    std::string domain = "source";
    int num_classes = 0; // 0 = derive from labels
    bool no_windows = false;
    uint32_t csv_rate = 25000;
    std::vector<int> channels = {0, 1};
    uint64_t seed = 0;
};

int run_ingest(const IngestArgs& a, const CLI::App* cmd) {
    if (a.inputs.empty()) throw CLI::ValidationError("ingest", "no input files given");

    std::vector<Recording> recordings;
    std::vector<std::string> errors;
    for (const std::string& input : a.inputs) {
        try {
            const fs::path p(input);
            if (p.extension() == ".csv")
                recordings.push_back(load_recording_csv(p, a.csv_rate));
            else
                recordings.push_back(load_recording(p));
        } catch (const std::exception& e) {
            errors.push_back(e.what());
        }
    }
    if (!errors.empty()) {
        for (const std::string& e : errors) std::cerr << "error: " << e << "\n";
        throw std::runtime_error("ingest: " + std::to_string(errors.size()) + " of " +
                                 std::to_string(a.inputs.size()) + " inputs failed to parse");
    }

    std::set<uint32_t> rates;
    for (const Recording& r : recordings) rates.insert(r.sample_rate_hz);
    if (rates.size() > 1) {
        std::string list;
        for (uint32_t r : rates) list += (list.empty() ? "" : ", ") + std::to_string(r);
        std::cerr << "warning: mixed sample rates across inputs: " << list << " Hz\n";
    }

    int num_classes = a.num_classes;
    if (num_classes == 0) {
        int max_label = -1;
        for (const Recording& r : recordings) max_label = std::max(max_label, r.label);
        num_classes = max_label + 1;
    }
    const bool is_source = a.domain == "source";
    if (is_source) {
        for (const Recording& r : recordings)
            if (r.label < 0)
                throw std::runtime_error("ingest: source-domain recording '" + r.id +
                                         "' is unlabeled; supply labeled TRAW inputs or --domain target");
        if (num_classes < 2) throw std::runtime_error("ingest: source domain needs at least 2 classes");
    }

    if (a.channels.size() != kNumChannels)
        throw CLI::ValidationError("ingest", "--channels takes exactly " + std::to_string(kNumChannels) +
                                                 " channel indices");
    std::vector<std::string> warnings;
    auto per_recording = segment_all(recordings, a.overlap, {a.channels[0], a.channels[1]});
    int64_t total_segments = 0, total_windows = 0;
    for (const auto& segs : per_recording) {
        total_segments += static_cast<int64_t>(segs.size());
        total_windows += expected_window_count(static_cast<int64_t>(segs.size()));
    }

    SplitDataset data;
    const bool split = is_source;
    if (split) {
        data = split_dataset(per_recording, num_classes, a.train_fraction, a.overlap, Domain::source,
                             !a.no_windows, &warnings);
    } else {
        data.train = assemble_unsplit(per_recording, std::max(num_classes, 1), Domain::target, !a.no_windows,
                                      &warnings);
        data.test.num_classes = data.train.num_classes;
        data.test.norm_stats = data.train.norm_stats;
        data.test.domain_tag = data.train.domain_tag;
    }
    print_warnings(warnings);

    save_dataset(a.out_dir, data, !a.no_windows, split);

    std::vector<fs::path> input_paths(a.inputs.begin(), a.inputs.end());
    std::vector<std::string> outputs = {"dataset.json", "train_segments.bin"};
    if (split) outputs.push_back("test_segments.bin");
    write_manifest(a.out_dir, "ingest", collect_config(cmd), input_paths, outputs, a.seed);

    std::cout << "segments: " << total_segments << ", windows: " << total_windows << "\n";
    std::cout << "train: " << data.train.segments.size() << " segments, " << data.train.windows.size()
              << " windows\n";
    std::cout << "test: " << data.test.segments.size() << " segments, " << data.test.windows.size()
              << " windows\n";
    return 0;
}

// --- train / distill ---------------------------------------------------------

struct TrainArgs {
    std::string dataset_dir;
    std::string out_dir;
    std::string model = "baseline";
    std::string teacher_ckpt;
    TrainConfig config;
};

int run_train_common(const TrainArgs& a, const CLI::App* cmd, bool distill) {
    const StoredDataset stored = load_dataset(a.dataset_dir);
    if (!stored.split)
        throw std::runtime_error("train: dataset '" + a.dataset_dir +
                                 "' has no test side (ingested with --domain target?)");

    std::vector<fs::path> inputs = {fs::path(a.dataset_dir) / "dataset.json",
                                    fs::path(a.dataset_dir) / "train_segments.bin",
                                    fs::path(a.dataset_dir) / "test_segments.bin"};
    if (distill) inputs.push_back(a.teacher_ckpt);
    write_manifest(a.out_dir, distill ? "distill" : "train", collect_config(cmd), inputs,
                   {"checkpoint.ckpt", "metrics.csv", "confusion.csv"}, a.config.seed);

    TrainResult result;
    if (distill) {
        const Model teacher = load_checkpoint(a.teacher_ckpt, Variant::wide);
        result = distill_student(stored.data, teacher, a.config);
        if (result.excluded_segments > 0)
            std::cout << "excluded " << result.excluded_segments
                      << " boundary segments without a matching window\n";
    } else if (a.model == "teacher") {
        result = train_teacher(stored.data, a.config);
    } else {
        result = train_baseline(stored.data, a.config);
    }

    const fs::path out(a.out_dir);
    save_checkpoint(result.model, out / "checkpoint.ckpt");
    write_metrics_csv(out / "metrics.csv", result.history);
    const auto [acc, cm] = evaluate(result.model, stored.data.test);
    write_text_file(out / "confusion.csv", confusion_to_csv(cm));

    const EpochMetrics& last = result.history.back();
    std::cout << "final: train_acc=" << format_number(last.train_acc) << " test_acc=" << format_number(last.test_acc)
              << " (" << result.history.size() << " epochs)\n";
    return 0;
}

// --- transfer ----------------------------------------------------------------

struct TransferArgs {
    std::string dataset_dir;
    std::string out_dir;
    std::string mode = "no-kd";
    std::string student_ckpt;
    std::string teacher_ckpt;
    TrainConfig config;
};

int run_transfer(const TransferArgs& a, const CLI::App* cmd) {
    const StoredDataset stored = load_dataset(a.dataset_dir);
    const LabeledDataset& target = stored.data.train; // target datasets are unsplit

    std::vector<fs::path> inputs = {fs::path(a.dataset_dir) / "dataset.json",
                                    fs::path(a.dataset_dir) / "train_segments.bin"};
    const bool tcmkd_mode = a.mode == "tcmkd";
    if (tcmkd_mode) {
        if (a.teacher_ckpt.empty()) throw CLI::ValidationError("transfer", "--teacher is required for --mode tcmkd");
        inputs.push_back(a.teacher_ckpt);
    } else {
        if (a.student_ckpt.empty()) throw CLI::ValidationError("transfer", "--student is required for --mode no-kd");
        inputs.push_back(a.student_ckpt);
    }

    const std::string tag = tcmkd_mode ? "tcmkd" : "no_kd";
    std::vector<std::string> outputs = {"embeddings_" + tag + ".csv", "projection_" + tag + ".csv"};
    if (tcmkd_mode) {
        outputs.push_back("adapted_student.ckpt");
        outputs.push_back("loss_curve.csv");
    }
    write_manifest(a.out_dir, "transfer", collect_config(cmd), inputs, outputs, a.config.seed);

    EmbeddingSet embeddings;
    const fs::path out(a.out_dir);
    if (tcmkd_mode) {
        const Model teacher = load_checkpoint(a.teacher_ckpt, Variant::wide);
        if (target.windows.empty())
            throw std::runtime_error("transfer: tcmkd mode needs windows; dataset was ingested without them");
        AdaptResult adapted = tcmkd_tl_adapt(teacher, target, a.config);
        embeddings = std::move(adapted.embeddings);
        save_checkpoint(adapted.student, out / "adapted_student.ckpt");
        std::string curve = "epoch,mse\n";
        for (size_t e = 0; e < adapted.loss_curve.size(); ++e)
            curve += std::to_string(e + 1) + "," + format_number(adapted.loss_curve[e]) + "\n";
        write_text_file(out / "loss_curve.csv", curve);
    } else {
        const Model student = load_checkpoint(a.student_ckpt, Variant::narrow);
        // Restrict to valid window centers so both modes emit the same rows.
        std::vector<Segment> segments;
        if (stored.has_windows && !target.windows.empty()) {
            std::set<std::pair<std::string, int>> centers;
            for (const TemporalWindow& w : target.windows) centers.insert({w.source_id, w.center_index});
            for (const Segment& s : target.segments)
                if (centers.count({s.source_id, s.index})) segments.push_back(s);
        } else {
            segments = target.segments;
        }
        embeddings = extract_embeddings_no_kd(student, segments);
    }

    write_text_file(out / ("embeddings_" + tag + ".csv"), embeddings_to_csv(embeddings));
    const Projection2D proj = fit_projection(embeddings);
    const auto points = project(embeddings, proj);
    write_text_file(out / ("projection_" + tag + ".csv"),
                    projection_to_csv(points, embeddings.labels.empty() ? nullptr : &embeddings.labels, nullptr));

    std::cout << "embeddings: " << embeddings.count() << " x " << embeddings.dim << "\n";
    std::cout << "explained variance: " << format_number(proj.explained_variance[0]) << ", "
              << format_number(proj.explained_variance[1]) << "\n";
    return 0;
}

// --- score -------------------------------------------------------------------

int run_score(const std::string& embeddings_path, const std::string& reference_path, const std::string& out_path,
              double q, double ridge) {
    const EmbeddingSet reference = embeddings_from_csv(reference_path);
    const EmbeddingSet embeddings = embeddings_from_csv(embeddings_path);
    const AnomalyModel model = fit_anomaly_model(reference, ridge, q);
    const std::vector<double> scores = anomaly_scores(embeddings, model);
    std::vector<bool> flags(scores.size());
    size_t flagged = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
        flags[i] = scores[i] > model.threshold;
        flagged += flags[i] ? 1 : 0;
    }
    write_text_file(out_path, embeddings_to_csv(embeddings, &scores, &flags));
    std::cout << "threshold (q=" << format_number(q) << "): " << format_number(model.threshold) << "\n";
    std::cout << "flagged: " << flagged << " / " << scores.size() << " ("
              << format_number(100.0 * static_cast<double>(flagged) / static_cast<double>(scores.size()))
              << "%)\n";
    return 0;
}

// --- report ------------------------------------------------------------------

int run_report(const std::string& run_dir) {
    const fs::path dir(run_dir);
    std::vector<std::string> missing;
    if (!fs::exists(dir / "manifest.json")) missing.push_back("manifest.json");
    if (!fs::exists(dir / "metrics.csv") && !fs::exists(dir / "loss_curve.csv") &&
        !fs::exists(dir / "embeddings_no_kd.csv") && !fs::exists(dir / "embeddings_tcmkd.csv"))
        missing.push_back("metrics.csv (or loss_curve.csv / embeddings_*.csv)");
    if (!missing.empty()) {
        std::cerr << "report: missing artifacts in " << run_dir << ":\n";
        for (const std::string& m : missing) std::cerr << "  " << m << "\n";
        return 1;
    }

    std::string summary;
    summary += "run: " + run_dir + "\n";
    {
        std::ifstream in(dir / "manifest.json");
        json manifest;
        in >> manifest;
        summary += "command: " + manifest.value("command", std::string("?")) + "\n";
        summary += "seed: " + std::to_string(manifest.value("seed", uint64_t(0))) + "\n";
    }

    if (fs::exists(dir / "metrics.csv")) {
        const std::string csv = read_text_file(dir / "metrics.csv");
        std::vector<std::string> lines;
        std::stringstream ss(csv);
        std::string line;
        while (std::getline(ss, line))
            if (!line.empty()) lines.push_back(line);
        if (lines.size() >= 2) {
            summary += "epochs: " + std::to_string(lines.size() - 1) + "\n";
            summary += "final metrics: " + lines.back() + "\n";

            // Plot-ready splits of the metrics history.
            std::string acc_csv = "epoch,train_acc,test_acc\n";
            std::string loss_csv = "epoch,train_loss,ce_loss,kd_loss\n";
            for (size_t i = 1; i < lines.size(); ++i) {
                std::vector<std::string> cells;
                std::stringstream row(lines[i]);
                std::string cell;
                while (std::getline(row, cell, ',')) cells.push_back(cell);
                if (cells.size() != 6) continue;
                acc_csv += cells[0] + "," + cells[4] + "," + cells[5] + "\n";
                loss_csv += cells[0] + "," + cells[1] + "," + cells[2] + "," + cells[3] + "\n";
            }
            write_text_file(dir / "plot_accuracy.csv", acc_csv);
            write_text_file(dir / "plot_loss.csv", loss_csv);
        }
    }
    if (fs::exists(dir / "loss_curve.csv")) {
        const std::string csv = read_text_file(dir / "loss_curve.csv");
        std::vector<std::string> lines;
        std::stringstream ss(csv);
        std::string line;
        while (std::getline(ss, line))
            if (!line.empty()) lines.push_back(line);
        if (lines.size() >= 2) {
            summary += "adaptation epochs: " + std::to_string(lines.size() - 1) + "\n";
            summary += "adaptation loss first/last: " + lines[1] + " / " + lines.back() + "\n";
        }
    }
    if (fs::exists(dir / "confusion.csv")) summary += "confusion matrix: confusion.csv\n";

    // Silhouette comparison across transfer modes when one directory holds
    // both embedding exports (point both transfer runs at the same --out).
    std::vector<std::pair<std::string, fs::path>> embedding_files;
    if (fs::exists(dir / "embeddings_no_kd.csv"))
        embedding_files.push_back({"no-kd", dir / "embeddings_no_kd.csv"});
    if (fs::exists(dir / "embeddings_tcmkd.csv"))
        embedding_files.push_back({"tcmkd", dir / "embeddings_tcmkd.csv"});

    std::map<std::string, double> silhouettes;
    for (const auto& [name, path] : embedding_files) {
        const EmbeddingSet set = embeddings_from_csv(path);
        if (set.labels.empty()) continue;
        std::vector<std::string> warnings;
        silhouettes[name] = silhouette(set, &warnings);
        print_warnings(warnings);
        summary += "silhouette(" + name + "): " + format_number(silhouettes[name]) + "\n";
    }
    if (silhouettes.count("no-kd") && silhouettes.count("tcmkd"))
        summary += std::string("silhouette ordering: ") +
                   (silhouettes["tcmkd"] >= silhouettes["no-kd"] ? "tcmkd >= no-kd" : "VIOLATED: tcmkd < no-kd") +
                   "\n";

    write_text_file(dir / "summary.txt", summary);
    std::cout << summary;
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Temporal cross-modal knowledge distillation for vibration fault detection"};
    app.set_version_flag("--version", kVersion);
    app.set_config("--config", "", "Flat key=value config file; flags override");
    app.require_subcommand(1);

    uint64_t seed = 0;
    app.add_option("--seed", seed, "Global random seed")->capture_default_str();

    // synth
    SynthArgs synth_args;
    CLI::App* synth = app.add_subcommand("synth", "Generate synthetic multi-class recordings (TRAW)");
    synth->add_option("--out", synth_args.out_dir, "Output directory")->required();
    synth->add_option("--classes", synth_args.num_classes, "Number of classes")->capture_default_str();
    synth->add_option("--recordings-per-class", synth_args.recordings_per_class)->capture_default_str();
    synth->add_option("--length", synth_args.length, "Samples per recording")->capture_default_str();
    synth->add_option("--rate", synth_args.rate, "Sample rate in Hz")->capture_default_str();
    synth->add_option("--noise", synth_args.noise, "Gaussian noise stddev")->capture_default_str();
    synth->add_option("--mod-depth", synth_args.mod_depth, "Amplitude modulation depth")->capture_default_str();
    synth->add_option("--jitter", synth_args.jitter, "Carrier phase random-walk stddev (rad/sample)")
        ->capture_default_str();
    synth->add_option("--carriers", synth_args.carriers, "Per-class carrier frequencies (cycles/sample)");
    synth->add_option("--mod-periods", synth_args.mod_periods, "Per-class modulation periods (segment lengths)");

    // convert
    std::string convert_in, convert_out;
    uint32_t convert_rate = 25000;
    int convert_label = -1;
    CLI::App* convert = app.add_subcommand("convert", "Convert a CSV recording (one column per channel) to TRAW");
    convert->add_option("--input", convert_in, "CSV input path")->required();
    convert->add_option("--output", convert_out, "TRAW output path")->required();
    convert->add_option("--rate", convert_rate, "Sample rate in Hz")->capture_default_str();
    convert->add_option("--label", convert_label, "Class label (-1 = unlabeled)")->capture_default_str();

    // ingest
    IngestArgs ingest_args;
    CLI::App* ingest = app.add_subcommand("ingest", "Segment, window, normalize and split recordings");
    ingest->add_option("--inputs", ingest_args.inputs, "TRAW or CSV recordings")->required()->expected(-1);
    ingest->add_option("--out", ingest_args.out_dir, "Output dataset directory")->required();
    ingest->add_option("--train-fraction", ingest_args.train_fraction)->capture_default_str();
    ingest->add_option("--overlap", ingest_args.overlap, "Segment overlap fraction")->capture_default_str();
    ingest->add_option("--domain", ingest_args.domain, "source (labeled, split) or target (unsplit)")
        ->check(CLI::IsMember({"source", "target"}))
        ->capture_default_str();
    ingest->add_option("--num-classes", ingest_args.num_classes, "0 = derive from labels")->capture_default_str();
    ingest->add_flag("--no-windows", ingest_args.no_windows, "Skip temporal window construction");
    ingest->add_option("--csv-rate", ingest_args.csv_rate, "Sample rate for CSV inputs")->capture_default_str();
    ingest->add_option("--channels", ingest_args.channels, "Two channel indices to use")
        ->expected(2)
        ->capture_default_str();

    // train
    TrainArgs train_args;
    CLI::App* train = app.add_subcommand("train", "Train the baseline or teacher model");
    train->add_option("--dataset", train_args.dataset_dir, "Ingested dataset directory")->required();
    train->add_option("--out", train_args.out_dir, "Run output directory")->required();
    train->add_option("--model", train_args.model, "baseline or teacher")
        ->check(CLI::IsMember({"baseline", "teacher"}))
        ->capture_default_str();
    train->add_option("--epochs", train_args.config.epochs)->capture_default_str();
    train->add_option("--batch-size", train_args.config.batch_size)->capture_default_str();
    train->add_option("--lr", train_args.config.adam.learning_rate)->capture_default_str();

    // distill
    TrainArgs distill_args;
    CLI::App* distill = app.add_subcommand("distill", "Distill a teacher checkpoint into a student");
    distill->add_option("--dataset", distill_args.dataset_dir, "Ingested dataset directory")->required();
    distill->add_option("--out", distill_args.out_dir, "Run output directory")->required();
    distill->add_option("--teacher", distill_args.teacher_ckpt, "Wide-variant teacher checkpoint")->required();
    distill->add_option("--kd-weight", distill_args.config.kd_weight, "Feature-alignment loss weight")
        ->capture_default_str();
    distill->add_option("--epochs", distill_args.config.epochs)->capture_default_str();
    distill->add_option("--batch-size", distill_args.config.batch_size)->capture_default_str();
    distill->add_option("--lr", distill_args.config.adam.learning_rate)->capture_default_str();

    // transfer
    TransferArgs transfer_args;
    CLI::App* transfer = app.add_subcommand("transfer", "Extract target-domain embeddings (no-kd or tcmkd mode)");
    transfer->add_option("--dataset", transfer_args.dataset_dir, "Target dataset directory")->required();
    transfer->add_option("--out", transfer_args.out_dir, "Run output directory")->required();
    transfer->add_option("--mode", transfer_args.mode, "no-kd or tcmkd")
        ->check(CLI::IsMember({"no-kd", "tcmkd"}))
        ->capture_default_str();
    transfer->add_option("--student", transfer_args.student_ckpt, "Narrow checkpoint (no-kd mode)");
    transfer->add_option("--teacher", transfer_args.teacher_ckpt, "Wide checkpoint (tcmkd mode)");
    transfer->add_option("--epochs", transfer_args.config.epochs)->capture_default_str();
    transfer->add_option("--batch-size", transfer_args.config.batch_size)->capture_default_str();
    transfer->add_option("--lr", transfer_args.config.adam.learning_rate)->capture_default_str();

    // score
    std::string score_embeddings, score_reference, score_out;
    double score_q = 0.99, score_ridge = 1e-6;
    CLI::App* score = app.add_subcommand("score", "Mahalanobis anomaly scores against a reference embedding set");
    score->add_option("--embeddings", score_embeddings, "Embeddings CSV to score")->required();
    score->add_option("--reference", score_reference, "Reference (normal) embeddings CSV")->required();
    score->add_option("--out", score_out, "Scored CSV output path")->required();
    score->add_option("--q", score_q, "Threshold quantile")->capture_default_str();
    score->add_option("--ridge", score_ridge, "Covariance ridge term")->capture_default_str();

    // report
    std::string report_dir;
    CLI::App* report = app.add_subcommand("report", "Summarize a run directory");
    report->add_option("--run", report_dir, "Run directory")->required();

    bool print_config = false;
    app.add_flag("--print-config", print_config, "Print the resolved configuration and exit");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    if (print_config) {
        std::cout << app.config_to_str(true, true);
        return 0;
    }

    train_args.config.seed = seed;
    distill_args.config.seed = seed;
    transfer_args.config.seed = seed;
    synth_args.seed = seed;
    ingest_args.seed = seed;

    try {
        if (synth->parsed()) return run_synth(synth_args, synth);
        if (convert->parsed()) return run_convert(convert_in, convert_out, convert_rate, convert_label);
        if (ingest->parsed()) return run_ingest(ingest_args, ingest);
        if (train->parsed()) return run_train_common(train_args, train, false);
        if (distill->parsed()) return run_train_common(distill_args, distill, true);
        if (transfer->parsed()) return run_transfer(transfer_args, transfer);
        if (score->parsed()) return run_score(score_embeddings, score_reference, score_out, score_q, score_ridge);
        if (report->parsed()) return run_report(report_dir);
    } catch (const CLI::ValidationError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
