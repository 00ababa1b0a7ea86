// nsc: run scenarios and presets, virtualize C globals, diff pcap traces,
// summarize stats files.

#include "nsc/globalizer.hpp"
#include "nsc/scenario.hpp"
#include "nsc/trace.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

namespace
{
    using namespace nsc;

    constexpr int kRuntimeError = 1;
    constexpr int kValidationError = 2;

    int exit_code_for(Errc code)
    {
        switch (code)
        {
        case Errc::ParseError:
        case Errc::ValidationError:
        case Errc::UnknownPreset:
        case Errc::SchemaMismatch:
        case Errc::InvalidConfig:
        case Errc::InvalidLink:
        case Errc::UnsupportedInitializer:
        case Errc::UnterminatedString:
        case Errc::UnterminatedComment:
        case Errc::BadMagic:
        case Errc::TruncatedRecord:
        case Errc::UnsupportedLinktype:
        case Errc::MultipleFlows:
        case Errc::MalformedPacket:
            return kValidationError;
        default:
            return kRuntimeError;
        }
    }

    void write_file(const std::filesystem::path &path, const std::string &text)
    {
        std::ofstream out(path, std::ios::binary);
        out << text;
        if (!out)
        {
            throw Error(Errc::Io, "cannot write " + path.string());
        }
    }

    // Runs one scenario; with an output directory the stats go to <name>.csv there.
    void run_one(const scenario::Scenario &s, const std::optional<std::filesystem::path> &out)
    {
        scenario::RunOptions options;
        options.out_dir = out;
        const scenario::RunResult r = scenario::run_scenario(s, options);
        if (!out)
        {
            std::cout << r.stats_csv();
            return;
        }
        const auto csv = *out / (s.name + ".csv");
        write_file(csv, r.stats_csv());
        std::cout << s.name << ": " << r.flows.size() << " flows, " << r.events << " events -> " << csv.string()
                  << "\n";
        for (const auto &p : r.traces_written)
        {
            std::cout << "  trace " << p.string() << "\n";
        }
    }
}

int main(int argc, char **argv)
{
    CLI::App app{"Network simulation cradle for micro TCP/IP stacks"};
    app.require_subcommand(1);

    auto *run = app.add_subcommand("run", "Run a scenario file");
    std::string scenario_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    run->add_option("SCENARIO", scenario_path, "Scenario file")->required();
    run->add_option("--seed", seed, "Override the scenario seed");
    run->add_option("--out", out_dir, "Directory for stats CSV and traces (stats go to stdout otherwise)");

    auto *pre = app.add_subcommand("preset", "Run a built-in experiment");
    std::string preset_name;
    std::optional<double> preset_loss;
    std::optional<std::uint64_t> preset_seed;
    std::optional<std::string> preset_out;
    bool print_only = false;
    pre->add_option("NAME", preset_name, "delayed-ack, split-hack, frag-sweep or hetero-prr")->required();
    pre->add_option("--out", preset_out, "Directory for scenario files, stats CSV and traces");
    pre->add_option("--loss", preset_loss, "Override the loss probability of the swept links");
    pre->add_option("--seed", preset_seed, "Override the seed");
    pre->add_flag("--print", print_only, "Print the scenario files instead of running them");

    auto *glob = app.add_subcommand("globalize", "Turn C globals into per-stack arrays");
    std::string in_path, out_path;
    glob::TransformConfig cfg;
    glob->add_option("--in", in_path, "Preprocessed C source")->required();
    glob->add_option("--out", out_path, "Output file")->required();
    glob->add_option("--dim", cfg.dim_symbol, "Array dimension symbol")->capture_default_str();
    glob->add_option("--accessor", cfg.accessor, "Expression yielding the active stack id")->capture_default_str();
    glob->add_option("--prefix", cfg.prefix, "Prefix for rewritten names")->capture_default_str();
    glob->add_option("--exclude", cfg.exclude, "Leave this name alone (repeatable)");
    glob->add_option("--include", cfg.include, "Only rewrite these names (repeatable)");
    glob->add_option("--init-fn", cfg.init_fn_name, "Name of the generated initializer function")
        ->capture_default_str();
    glob->add_flag("--strip-comments", cfg.strip_comments, "Treat comments as whitespace, as cpp would");

    auto *diff = app.add_subcommand("trace-diff", "Compare two pcap traces by behavior");
    std::string trace_a, trace_b;
    std::optional<std::string> endpoint_a;
    diff->add_option("A", trace_a, "First pcap")->required();
    diff->add_option("B", trace_b, "Second pcap")->required();
    diff->add_option("--endpoint-a", endpoint_a, "Address treated as endpoint A");

    auto *rep = app.add_subcommand("report", "Tabulate stats CSV files");
    std::vector<std::string> stats_files;
    bool rep_csv = false;
    rep->add_option("FILES", stats_files, "Stats files written by run or preset")->required();
    rep->add_flag("--csv", rep_csv, "Emit CSV instead of the text table");

    CLI11_PARSE(app, argc, argv);

    try
    {
        if (*run)
        {
            scenario::Scenario s = scenario::load_scenario(scenario_path);
            if (seed)
            {
                s.seed = *seed;
            }
            run_one(s, out_dir ? std::optional<std::filesystem::path>(*out_dir) : std::nullopt);
        }
        else if (*pre)
        {
            const auto scenarios = scenario::preset(preset_name, {preset_loss, preset_seed});
            std::optional<std::filesystem::path> out;
            if (preset_out)
            {
                out = *preset_out;
                std::filesystem::create_directories(*out);
            }
            for (const auto &s : scenarios)
            {
                if (print_only)
                {
                    std::cout << scenario::format_scenario(s) << "\n";
                    continue;
                }
                if (out)
                {
                    write_file(*out / (s.name + ".scn"), scenario::format_scenario(s));
                }
                run_one(s, out);
            }
        }
        else if (*glob)
        {
            const glob::TransformResult r = glob::globalize_file(in_path, out_path, cfg);
            std::cout << r.report();
        }
        else if (*diff)
        {
            std::optional<Ipv4Addr> a;
            if (endpoint_a)
            {
                a = Ipv4Addr::parse(*endpoint_a);
                if (!a)
                {
                    throw Error(Errc::ValidationError, "--endpoint-a: not an IPv4 address: " + *endpoint_a);
                }
            }
            const auto va = trace::normalize(trace::trace_read(trace_a), a);
            const auto vb = trace::normalize(trace::trace_read(trace_b), a);
            const trace::Verdict v = trace::trace_compare(va, vb);
            std::cout << v.describe() << "\n";
            return v.equal() ? 0 : kRuntimeError;
        }
        else if (*rep)
        {
            std::vector<scenario::StatsFile> files;
            for (const auto &f : stats_files)
            {
                files.push_back(scenario::load_stats(f));
            }
            const scenario::Report r = scenario::make_report(files);
            std::cout << (rep_csv ? r.csv : r.text);
        }
    }
    catch (const Error &e)
    {
        std::cerr << "nsc: " << e.what() << "\n";
        return exit_code_for(e.code());
    }
    catch (const std::exception &e)
    {
        std::cerr << "nsc: " << e.what() << "\n";
        return kRuntimeError;
    }
    return 0;
}
