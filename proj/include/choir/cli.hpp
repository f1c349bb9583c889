#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "choir/augment.hpp"
#include "choir/checkpoint.hpp"
#include "choir/chorale_json.hpp"
#include "choir/common.hpp"
#include "choir/generate.hpp"
#include "choir/metrics.hpp"
#include "choir/midi.hpp"
#include "choir/pianoroll.hpp"
#include "choir/quantize.hpp"
#include "choir/tokenizer.hpp"
#include "choir/trainer.hpp"

namespace choir::cli {

namespace detail {

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

inline std::vector<std::uint8_t> read_binary(const std::filesystem::path& path) {
    std::string text = read_file(path);
    return std::vector<std::uint8_t>(text.begin(), text.end());
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw data_error("cannot write " + path.string());
    out << content;
    if (!out) throw data_error("write failed for " + path.string());
}

inline std::filesystem::path prepare_output_dir(const std::string& dir) {
    std::filesystem::path path(dir);
    std::error_code ec;
    std::filesystem::create_directories(path, ec);
    if (ec) throw data_error("cannot create output directory " + path.string() + ": " + ec.message());
    return path;
}

inline void echo_config(const std::filesystem::path& out_dir, CLI::App* sub) {
    write_file(out_dir / (sub->get_name() + ".config"), sub->config_to_str(true, false));
}

inline std::vector<GridScore> load_corpus(const std::filesystem::path& path) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw data_error("corpus " + path.string() + ": " + e.what());
    }
    const nlohmann::json* pieces = nullptr;
    if (doc.is_array()) pieces = &doc;
    else if (doc.is_object() && doc.contains("pieces") && doc["pieces"].is_array()) pieces = &doc["pieces"];
    else throw data_error("corpus " + path.string() + ": expected an array or an object with a 'pieces' array");
    if (pieces->empty()) throw data_error("corpus " + path.string() + ": no pieces");
    std::vector<GridScore> scores;
    for (std::size_t i = 0; i < pieces->size(); ++i) {
        try {
            scores.push_back(score_from_json((*pieces)[i]));
        } catch (const data_error& e) {
            throw data_error("corpus " + path.string() + ": piece " + std::to_string(i) + ": " + e.what());
        }
    }
    return scores;
}

inline std::string corpus_json(const std::vector<GridScore>& pieces) {
    nlohmann::json doc;
    auto& arr = doc["pieces"] = nlohmann::json::array();
    for (const GridScore& piece : pieces) arr.push_back(score_to_json(piece));
    return doc.dump(2) + "\n";
}

inline std::string tokens_file(const std::vector<GridScore>& pieces, SeqLayout layout) {
    std::string out;
    for (const GridScore& piece : pieces) out += tokens_to_line(encode(piece, layout)) + "\n";
    return out;
}

inline SeqLayout layout_for(const ModelConfig& cfg) {
    if (cfg.vocab_size == vocab::kSize) return SeqLayout{true};
    if (cfg.vocab_size == vocab::kNoteCount) return SeqLayout{false};
    throw data_error("checkpoint vocabulary " + std::to_string(cfg.vocab_size) +
                     " matches neither sequence layout");
}

struct IngestArgs {
    std::string input, output;
    std::string voice_policy = "mean-pitch";
};

inline void run_ingest(const IngestArgs& args, CLI::App* sub) {
    std::filesystem::path in_dir(args.input);
    if (!std::filesystem::is_directory(in_dir)) throw data_error("input directory not found: " + args.input);
    VoicePolicy policy = args.voice_policy == "track-order" ? VoicePolicy::TrackOrder : VoicePolicy::MeanPitchDescending;

    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(in_dir)) {
        if (!entry.is_regular_file()) continue;
        std::string ext = entry.path().extension().string();
        for (auto& ch : ext) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        if (ext == ".mid" || ext == ".midi" || ext == ".json") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw data_error("no .mid/.midi/.json scores in " + args.input);

    std::vector<GridScore> pieces;
    nlohmann::json manifest = nlohmann::json::array();
    for (const auto& file : files) {
        std::string ext = file.extension().string();
        for (auto& ch : ext) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        GridScore score;
        try {
            if (ext == ".json") {
                score = load_chorale_json(read_file(file));
            } else {
                std::vector<std::uint8_t> bytes = read_binary(file);
                RawScore raw = parse_midi(bytes);
                std::vector<std::string> warnings;
                score = quantize(raw, policy, &warnings);
                for (const auto& w : warnings) std::cerr << file.filename().string() << ": " << w << "\n";
            }
        } catch (const data_error& e) {
            throw data_error(file.string() + ": " + e.what());
        }
        if (score.title.empty()) score.title = file.stem().string();
        manifest.push_back({{"file", file.filename().string()},
                            {"title", score.title},
                            {"steps", score.length()},
                            {"tokens", score.length() * static_cast<std::size_t>(SeqLayout{}.tokens_per_step())}});
        pieces.push_back(std::move(score));
    }

    auto out_dir = prepare_output_dir(args.output);
    write_file(out_dir / "corpus.json", corpus_json(pieces));
    write_file(out_dir / "tokens.txt", tokens_file(pieces, SeqLayout{}));
    write_file(out_dir / "manifest.json", manifest.dump(2) + "\n");
    echo_config(out_dir, sub);
    std::cerr << "ingested " << pieces.size() << " pieces into " << out_dir.string() << "\n";
}

struct AugmentArgs {
    std::string input, output;
    bool transpose = false;
    bool reverse = false;
};

inline void run_augment(const AugmentArgs& args, CLI::App* sub) {
    std::vector<GridScore> pieces = load_corpus(args.input);
    std::vector<std::string> warnings;
    Corpus corpus = expand_dataset(pieces, args.transpose, args.reverse, &warnings);
    for (const auto& w : warnings) std::cerr << w << "\n";

    std::vector<GridScore> out_pieces;
    for (const TaggedPiece& piece : corpus) {
        GridScore score = piece.score;
        if (piece.transform.k != 0 || piece.transform.reversed)
            score.title += "#" + transform_name(piece.transform);
        out_pieces.push_back(std::move(score));
    }

    auto out_dir = prepare_output_dir(args.output);
    write_file(out_dir / "corpus.json", corpus_json(out_pieces));
    write_file(out_dir / "tokens.txt", tokens_file(out_pieces, SeqLayout{}));
    write_file(out_dir / "manifest.json", provenance_manifest_json(corpus));
    echo_config(out_dir, sub);
    std::cerr << "expanded " << pieces.size() << " pieces to " << corpus.size() << "\n";
}

struct TrainArgs {
    std::string corpus, output, resume;
    ModelConfig model;
    TrainConfig train;
    bool ablation = false;
};

inline void run_train(const TrainArgs& args, CLI::App* sub) {
    std::vector<GridScore> pieces = load_corpus(args.corpus);
    auto out_dir = prepare_output_dir(args.output);
    echo_config(out_dir, sub);

    if (args.ablation) {
        std::vector<AblationRow> rows = run_ablation(pieces, args.model, args.train);
        write_file(out_dir / "ablation.csv", ablation_csv(rows));
        std::cerr << "ablation table written to " << (out_dir / "ablation.csv").string() << "\n";
        return;
    }

    TrainRunOptions opts;
    opts.best_path = out_dir / "best.ckpt";
    opts.last_path = out_dir / "last.ckpt";

    TrainResult result;
    if (!args.resume.empty()) {
        CheckpointData data = load_checkpoint(args.resume);
        TrainSession session = TrainSession::resume(data, args.train);
        SeqLayout layout = args.train.switches.layout();
        if (session.model_config.vocab_size != layout.vocab_size())
            throw data_error("resume checkpoint layout does not match the configured switches");

        std::vector<GridScore> train_pieces, val_pieces;
        split_corpus(pieces, args.train.val_fraction, args.train.seed, train_pieces, val_pieces);
        std::vector<std::string> warnings;
        Corpus train_corpus = expand_dataset(train_pieces, args.train.switches.transpose_aug,
                                             args.train.switches.reverse_aug, &warnings);
        for (const auto& w : warnings) std::cerr << w << "\n";
        std::vector<TokenSeq> train_seqs, val_seqs;
        for (const auto& piece : train_corpus) train_seqs.push_back(encode(piece.score, layout));
        for (const auto& piece : val_pieces) val_seqs.push_back(encode(piece, layout));
        result = train_core(session, train_seqs, val_seqs, opts);
    } else {
        std::vector<std::string> warnings;
        result = train(pieces, args.model, args.train, opts, &warnings);
        for (const auto& w : warnings) std::cerr << w << "\n";
    }

    write_file(out_dir / "metrics.csv", metrics_csv(result.log));
    for (const auto& row : result.log)
        std::cerr << "step " << row.step << " loss " << row.train_loss << " val_acc " << row.val_accuracy << "\n";
    std::cerr << "best validation accuracy " << result.best_val_accuracy << "\n";
}

struct GenerateArgs {
    std::string checkpoint, conditioning, output;
    std::string mode = "top-k";
    double temperature = 1.0;
    int top_k = 16;
    std::uint64_t seed = 1;
};

inline void run_generate(const GenerateArgs& args, CLI::App* sub) {
    CheckpointData data = load_checkpoint(args.checkpoint);
    ModelParams<float> params = params_from_checkpoint(data);
    GridScore cond_score = load_chorale_json(read_file(args.conditioning));
    Conditioning cond = Conditioning::from_score(cond_score);

    SamplingConfig sampling;
    sampling.mode = args.mode == "greedy"        ? SamplingMode::Greedy
                    : args.mode == "temperature" ? SamplingMode::Temperature
                                                 : SamplingMode::TopK;
    sampling.temperature = args.temperature;
    sampling.top_k = args.top_k;
    sampling.seed = args.seed;

    GridScore result = generate(params, data.config, cond, sampling);
    result.title = cond_score.title.empty() ? "generated" : cond_score.title + "#generated";

    auto out_dir = prepare_output_dir(args.output);
    write_file(out_dir / "generated.json", to_chorale_json(result));
    std::vector<std::uint8_t> midi = write_midi(result);
    write_file(out_dir / "generated.mid", std::string(midi.begin(), midi.end()));
    write_file(out_dir / "generated.csv", export_pianoroll(result));
    echo_config(out_dir, sub);
    std::cerr << "generated " << result.length() << " steps into " << out_dir.string() << "\n";
}

struct EvaluateArgs {
    std::string against, reference, checkpoint, output;
    std::string voice = "S";
};

inline void run_evaluate(const EvaluateArgs& args, CLI::App* sub) {
    std::vector<GridScore> pieces = load_corpus(args.against);
    int voice = 0;
    for (int v = 0; v < kVoices; ++v)
        if (args.voice == voice_name(v)) voice = v;
    MetricReport report = harmonic_report(pieces, voice);

    std::optional<CheckpointData> ckpt;
    std::optional<ModelParams<float>> params;
    if (!args.checkpoint.empty()) {
        ckpt = load_checkpoint(args.checkpoint);
        params = params_from_checkpoint(*ckpt);
        attach_ter(report, *params, ckpt->config, pieces, layout_for(ckpt->config));
    }

    std::optional<MetricReport> reference;
    if (!args.reference.empty()) {
        std::vector<GridScore> ref_pieces = load_corpus(args.reference);
        reference = harmonic_report(ref_pieces, voice);
        if (params) attach_ter(*reference, *params, ckpt->config, ref_pieces, layout_for(ckpt->config));
    }

    auto out_dir = prepare_output_dir(args.output);
    write_file(out_dir / "report.csv", report_csv(report, reference ? &*reference : nullptr));
    echo_config(out_dir, sub);
    std::cerr << "report written to " << (out_dir / "report.csv").string() << "\n";
}

struct AttentionArgs {
    std::string checkpoint, piece, output;
};

inline void run_analyze_attention(const AttentionArgs& args, CLI::App* sub) {
    CheckpointData data = load_checkpoint(args.checkpoint);
    ModelParams<float> params = params_from_checkpoint(data);
    GridScore piece = load_chorale_json(read_file(args.piece));
    SeqLayout layout = layout_for(data.config);

    TokenSeq seq = encode(piece, layout);
    auto max_tokens = static_cast<std::size_t>(data.config.max_len);
    if (seq.size() > max_tokens) {
        auto tps = static_cast<std::size_t>(layout.tokens_per_step());
        seq.resize(max_tokens / tps * tps);
        std::cerr << "piece truncated to " << seq.size() << " tokens\n";
    }
    ForwardTrace<float> trace;
    forward(seq, params, data.config, &trace);
    std::vector<double> distances = attention_distance(trace);

    std::string csv = "layer,mean_distance\n";
    char buf[64];
    for (std::size_t l = 0; l < distances.size(); ++l) {
        std::snprintf(buf, sizeof buf, "%zu,%.6f\n", l + 1, distances[l]);
        csv += buf;
    }
    auto out_dir = prepare_output_dir(args.output);
    write_file(out_dir / "attention.csv", csv);
    echo_config(out_dir, sub);
    std::cerr << "attention distances written to " << (out_dir / "attention.csv").string() << "\n";
}

}  // namespace detail

// Front door: parses argv, dispatches, and maps failures to exit codes
// (0 ok, 1 usage, 2 bad data, 3 numeric/runtime).
inline int run(int argc, const char* const* argv) {
    CLI::App app{"SATB chorale modeling pipeline"};
    app.require_subcommand(1);
    app.set_config("--config", "", "Configuration file (key=value, [section] per subcommand)");

    detail::IngestArgs ingest;
    CLI::App* ingest_cmd = app.add_subcommand("ingest", "Quantize MIDI/JSON scores into token files");
    ingest_cmd->add_option("--input", ingest.input, "Directory of .mid/.midi/.json scores")->required();
    ingest_cmd->add_option("--output", ingest.output, "Output directory")->required();
    ingest_cmd->add_option("--voice-policy", ingest.voice_policy, "Track-to-voice assignment")
        ->check(CLI::IsMember({"mean-pitch", "track-order"}))
        ->capture_default_str();

    detail::AugmentArgs augment;
    CLI::App* augment_cmd = app.add_subcommand("augment", "Expand a corpus by transposition and reversal");
    augment_cmd->add_option("--input", augment.input, "corpus.json to expand")->required();
    augment_cmd->add_option("--output", augment.output, "Output directory")->required();
    augment_cmd->add_flag("--transpose", augment.transpose, "Add the 11 non-identity transpositions");
    augment_cmd->add_flag("--reverse", augment.reverse, "Add retrograde copies");

    detail::TrainArgs train;
    CLI::App* train_cmd = app.add_subcommand("train", "Train the model on a corpus");
    train_cmd->add_option("--corpus", train.corpus, "corpus.json of annotated pieces")->required();
    train_cmd->add_option("--output", train.output, "Output directory")->required();
    train_cmd->add_option("--resume", train.resume, "Resume from a full-state checkpoint");
    train_cmd->add_flag("--ablation", train.ablation, "Run the 5-row switch ladder instead of one training run");
    train_cmd->add_option("--d-model", train.model.d_model, "Embedding width")->capture_default_str();
    train_cmd->add_option("--heads", train.model.num_heads, "Attention heads")->capture_default_str();
    train_cmd->add_option("--layers", train.model.num_layers, "Decoder layers")->capture_default_str();
    train_cmd->add_option("--d-ff", train.model.d_ff, "Feed-forward width")->capture_default_str();
    train_cmd->add_option("--max-len", train.model.max_len, "Maximum context in tokens")->capture_default_str();
    train_cmd->add_option("--max-rel-dist", train.model.max_rel_dist, "Relative-position clip window")
        ->capture_default_str();
    train_cmd->add_option("--dropout", train.model.dropout, "Dropout rate")->capture_default_str();
    train_cmd->add_flag("--absolute-pe,!--no-absolute-pe", train.model.use_absolute_pe,
                        "Additive sinusoidal positional encoding");
    train_cmd->add_option("--batch-size", train.train.batch_size, "Sequences per step")->capture_default_str();
    train_cmd->add_option("--crop-len", train.train.crop_len, "Tokens per crop")->capture_default_str();
    train_cmd->add_option("--lr", train.train.lr, "Peak learning rate")->capture_default_str();
    train_cmd->add_option("--warmup", train.train.warmup_steps, "Warmup steps")->capture_default_str();
    train_cmd->add_option("--max-steps", train.train.max_steps, "Optimizer steps")->capture_default_str();
    train_cmd->add_option("--val-fraction", train.train.val_fraction, "Held-out piece fraction")
        ->capture_default_str();
    train_cmd->add_option("--grad-clip", train.train.grad_clip, "Global gradient-norm clip")->capture_default_str();
    train_cmd->add_option("--log-interval", train.train.log_interval, "Steps between validation points")
        ->capture_default_str();
    train_cmd->add_option("--seed", train.train.seed, "Training and init seed")->capture_default_str();
    train_cmd->add_flag("--chord-tokens,!--no-chord-tokens", train.train.switches.chord_tokens,
                        "Chord token leading every step");
    train_cmd->add_flag("--relative-attention,!--no-relative-attention", train.train.switches.relative_attention,
                        "Learned relative-position attention");
    train_cmd->add_flag("--transpose-aug", train.train.switches.transpose_aug, "Transposition augmentation");
    train_cmd->add_flag("--reverse-aug", train.train.switches.reverse_aug, "Retrograde augmentation");

    detail::GenerateArgs generate;
    CLI::App* generate_cmd = app.add_subcommand("generate", "Harmonize a chord+soprano conditioning");
    generate_cmd->add_option("--checkpoint", generate.checkpoint, "Model checkpoint")->required();
    generate_cmd->add_option("--conditioning", generate.conditioning, "Chorale JSON with chords and soprano")
        ->required();
    generate_cmd->add_option("--output", generate.output, "Output directory")->required();
    generate_cmd->add_option("--mode", generate.mode, "Decoding strategy")
        ->check(CLI::IsMember({"greedy", "temperature", "top-k"}))
        ->capture_default_str();
    generate_cmd->add_option("--temperature", generate.temperature, "Softmax temperature")->capture_default_str();
    generate_cmd->add_option("--top-k", generate.top_k, "Top-k cutoff")->capture_default_str();
    generate_cmd->add_option("--seed", generate.seed, "Sampling seed")->capture_default_str();

    detail::EvaluateArgs evaluate;
    CLI::App* evaluate_cmd = app.add_subcommand("evaluate", "Harmonic metrics and token error rate");
    evaluate_cmd->add_option("--against", evaluate.against, "corpus.json to evaluate")->required();
    evaluate_cmd->add_option("--reference", evaluate.reference, "Reference corpus.json for deltas");
    evaluate_cmd->add_option("--checkpoint", evaluate.checkpoint, "Checkpoint for the TER column");
    evaluate_cmd->add_option("--voice", evaluate.voice, "Melody voice for the harmonic metrics")
        ->check(CLI::IsMember({"S", "A", "T", "B"}))
        ->capture_default_str();
    evaluate_cmd->add_option("--output", evaluate.output, "Output directory")->required();

    detail::AttentionArgs attention;
    CLI::App* attention_cmd = app.add_subcommand("analyze-attention", "Per-layer mean attention distances");
    attention_cmd->add_option("--checkpoint", attention.checkpoint, "Model checkpoint")->required();
    attention_cmd->add_option("--piece", attention.piece, "Chorale JSON to trace")->required();
    attention_cmd->add_option("--output", attention.output, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (ingest_cmd->parsed()) detail::run_ingest(ingest, ingest_cmd);
        else if (augment_cmd->parsed()) detail::run_augment(augment, augment_cmd);
        else if (train_cmd->parsed()) detail::run_train(train, train_cmd);
        else if (generate_cmd->parsed()) detail::run_generate(generate, generate_cmd);
        else if (evaluate_cmd->parsed()) detail::run_evaluate(evaluate, evaluate_cmd);
        else if (attention_cmd->parsed()) detail::run_analyze_attention(attention, attention_cmd);
    } catch (const data_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const numeric_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}

}  // namespace choir::cli
