#include "gradreg/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "CLI11.hpp"
#include "json.hpp"

#include "gradreg/gradmap.hpp"
#include "gradreg/metrics.hpp"
#include "gradreg/phantom.hpp"
#include "gradreg/train.hpp"

namespace gradreg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class MissingInput : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

void require_file(const fs::path& p) {
    if (!fs::is_regular_file(p)) throw MissingInput("missing input file: " + p.string());
}

void require_dir(const fs::path& p) {
    if (!fs::is_directory(p)) throw MissingInput("missing input directory: " + p.string());
}

void write_json(const fs::path& p, const json& j) { write_file_atomic(p, j.dump(2) + "\n"); }

json config_json(const std::string& key_value_text) {
    json j = json::object();
    std::istringstream in(key_value_text);
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq != std::string::npos) j[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return j;
}

std::vector<fs::path> case_dirs(const fs::path& root, const char* required) {
    require_dir(root);
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(root)) {
        if (e.is_directory() && fs::is_regular_file(e.path() / required)) out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

// ---------------------------------------------------------------------------

struct PhantomArgs {
    std::string config;
    std::string out;
    int count = 1;
};

void run_phantom(const PhantomArgs& a, std::ostream& out) {
    PhantomConfig base;
    if (!a.config.empty()) {
        require_file(a.config);
        base = parse_phantom_config(read_file(a.config));
    }
    base.validate();
    fs::create_directories(a.out);
    for (int k = 0; k < a.count; ++k) {
        PhantomConfig c = base;
        c.seed = base.seed + static_cast<std::uint64_t>(k);
        const PhantomCase pc = generate_phantom_pair(c);
        char name[32];
        std::snprintf(name, sizeof name, "case_%03d", k);
        const fs::path dir = fs::path(a.out) / name;
        fs::create_directories(dir);
        save_volume(pc.moving, dir / "moving.vol");
        save_volume(pc.fixed, dir / "fixed.vol");
        save_label_mask(pc.moving_mask, dir / "moving_mask.vol");
        save_label_mask(pc.fixed_mask, dir / "fixed_mask.vol");
        save_field(pc.gt_field, dir / "gt_field.vol");
        write_json(dir / "manifest.json",
                   json{{"kind", "phantom_case"},
                        {"case", name},
                        {"config", config_json(to_config_text(c))},
                        {"files",
                         {{"moving", "moving.vol"},
                          {"fixed", "fixed.vol"},
                          {"moving_mask", "moving_mask.vol"},
                          {"fixed_mask", "fixed_mask.vol"},
                          {"gt_field", "gt_field.vol"}}}});
        out << "wrote " << dir.string() << "\n";
    }
}

struct GradmapArgs {
    std::string in;
    std::string out;
};

void run_gradmap(const GradmapArgs& a, std::ostream& out) {
    require_file(a.in);
    save_volume(gradient_map(load_volume(a.in)), a.out);
    out << "wrote " << a.out << "\n";
}

struct TrainArgs {
    std::string config;
    std::string data;
    std::string out;
    std::vector<std::string> overrides;
};

TrainConfig resolve_train_config(const std::string& path, const std::vector<std::string>& overrides) {
    TrainConfig c;
    if (!path.empty()) {
        require_file(path);
        c = parse_train_config(read_file(path));
    }
    for (const auto& kv : overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw CLI::ValidationError("--set", "expected key=value, got " + kv);
        apply_config_value(c, kv.substr(0, eq), kv.substr(eq + 1));
    }
    c.validate();
    return c;
}

void run_train(const TrainArgs& a, std::ostream& out) {
    const TrainConfig config = resolve_train_config(a.config, a.overrides);
    const auto dirs = case_dirs(a.data, "moving.vol");
    if (dirs.empty()) throw MissingInput("no case directories with moving.vol under " + a.data);
    std::vector<VolumePair> pairs;
    for (const auto& d : dirs) {
        require_file(d / "fixed.vol");
        pairs.push_back({load_volume(d / "moving.vol"), load_volume(d / "fixed.vol")});
    }
    const fs::path out_dir = a.out;
    fs::create_directories(out_dir);
    const auto on_checkpoint = [&](const TrainedModel& m, int iter) {
        char name[48];
        std::snprintf(name, sizeof name, "iter_%06d.ckpt", iter);
        fs::create_directories(out_dir / "checkpoints");
        save_checkpoint(m, out_dir / "checkpoints" / name);
        out << "checkpoint " << iter << " total=" << m.history.back().total << "\n";
    };
    const TrainedModel model = train_dual_branch(pairs, config, on_checkpoint);
    save_checkpoint(model, out_dir / "model.ckpt");
    write_file_atomic(out_dir / "loss.csv", loss_history_csv(model.history));
    write_file_atomic(out_dir / "config.txt", to_config_text(config));
    json cases = json::array();
    for (const auto& d : dirs) cases.push_back(d.filename().string());
    write_json(out_dir / "manifest.json", json{{"kind", "trained_model"},
                                               {"config", config_json(to_config_text(config))},
                                               {"training_cases", cases},
                                               {"files", {{"model", "model.ckpt"}, {"loss", "loss.csv"}}}});
    out << "trained " << config.iterations << " iterations on " << pairs.size() << " pairs";
    if (!model.history.empty()) out << ", final total=" << model.history.back().total;
    out << "\n";
}

struct RegisterArgs {
    std::string model;
    std::string moving;
    std::string fixed;
    std::string out;
};

void run_register(const RegisterArgs& a, std::ostream& out) {
    require_file(a.model);
    require_file(a.moving);
    require_file(a.fixed);
    const TrainedModel model = load_checkpoint(a.model);
    const Volume moving = load_volume(a.moving);
    const Volume fixed = load_volume(a.fixed);
    const Registration r = register_pair(model, moving, fixed);
    const fs::path dir = a.out;
    fs::create_directories(dir);
    save_field(r.field, dir / "field.vol", moving.spacing());
    save_volume(r.warped, dir / "warped.vol");
    const LossReport reports[] = {r.report};
    write_file_atomic(dir / "loss.csv", loss_history_csv(reports, 0));
    out << "wrote " << dir.string() << " total=" << r.report.total << "\n";
}

struct EvalArgs {
    std::string pred;
    std::string truth;
    std::string out;
};

void run_eval(const EvalArgs& a, std::ostream& out) {
    require_dir(a.pred);
    const auto truth = case_dirs(a.truth, "fixed_mask.vol");
    std::vector<EvalReport> reports;
    for (const auto& t : truth) {
        const fs::path pred_field = fs::path(a.pred) / t.filename() / "field.vol";
        if (!fs::is_regular_file(pred_field)) continue;
        require_file(t / "moving_mask.vol");
        const LabelMask moving_mask = load_label_mask(t / "moving_mask.vol");
        const LabelMask fixed_mask = load_label_mask(t / "fixed_mask.vol");
        const DeformationField field = load_field(pred_field);
        std::optional<DeformationField> gt;
        if (fs::is_regular_file(t / "gt_field.vol")) gt = load_field(t / "gt_field.vol");
        reports.push_back(evaluate_case(t.filename().string(), moving_mask, fixed_mask, field, gt ? &*gt : nullptr));
    }
    if (reports.empty()) {
        throw MissingInput("no cases under " + a.truth + " have a prediction at " + a.pred + "/<case>/field.vol");
    }
    const fs::path csv = a.out;
    if (csv.has_parent_path()) fs::create_directories(csv.parent_path());
    write_file_atomic(csv, eval_csv(reports));
    out << "evaluated " << reports.size() << " cases -> " << csv.string() << "\n";
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Dual-branch multimodal deformable registration", "gradreg"};
    app.require_subcommand(1);

    PhantomArgs phantom_args;
    auto* phantom = app.add_subcommand("phantom", "generate synthetic CT/MR-like case directories");
    phantom->add_option("--config", phantom_args.config, "phantom config file (key=value)");
    phantom->add_option("--out", phantom_args.out, "output directory")->required();
    phantom->add_option("--count", phantom_args.count, "number of cases")->check(CLI::PositiveNumber);

    GradmapArgs gradmap_args;
    auto* gradmap = app.add_subcommand("gradmap", "write the gradient-magnitude map of a volume");
    gradmap->add_option("--in", gradmap_args.in, "input volume (.vol or .nii)")->required();
    gradmap->add_option("--out", gradmap_args.out, "output volume (.vol)")->required();

    TrainArgs train_args;
    auto* train = app.add_subcommand("train", "train the dual-branch model on case directories");
    train->add_option("--config", train_args.config, "training config file (key=value)");
    train->add_option("--data", train_args.data, "directory of case_* subdirectories")->required();
    train->add_option("--out", train_args.out, "output directory")->required();
    train->add_option("--set", train_args.overrides, "config override key=value (repeatable)");

    RegisterArgs register_args;
    auto* reg = app.add_subcommand("register", "register one pair with a trained model");
    reg->add_option("--model", register_args.model, "checkpoint file")->required();
    reg->add_option("--moving", register_args.moving, "moving (CT-like) volume")->required();
    reg->add_option("--fixed", register_args.fixed, "fixed (MR-like) volume")->required();
    reg->add_option("--out", register_args.out, "output directory")->required();

    EvalArgs eval_args;
    auto* eval = app.add_subcommand("eval", "score predicted fields against case masks");
    eval->add_option("--pred", eval_args.pred, "directory of <case>/field.vol predictions")->required();
    eval->add_option("--truth", eval_args.truth, "directory of phantom case subdirectories")->required();
    eval->add_option("--out", eval_args.out, "output CSV")->required();

    try {
        app.parse(std::vector<std::string>(args.rbegin(), args.rend()));
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return 1;
    }

    try {
        if (phantom->parsed()) run_phantom(phantom_args, out);
        if (gradmap->parsed()) run_gradmap(gradmap_args, out);
        if (train->parsed()) run_train(train_args, out);
        if (reg->parsed()) run_register(register_args, out);
        if (eval->parsed()) run_eval(eval_args, out);
    } catch (const CLI::ValidationError& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}

}  // namespace gradreg
