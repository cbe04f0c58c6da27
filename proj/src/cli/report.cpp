#include "ditmos/cli/report.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

namespace ditmos::cli {

using nlohmann::json;

namespace {

class Checker {
public:
    explicit Checker(std::vector<std::string>& errors) : errors_(errors) {}

    const json* field(const json& obj, const std::string& path, const char* key)
    {
        if (!obj.is_object() || !obj.contains(key)) {
            fail(path + "." + key, "missing");
            return nullptr;
        }
        return &obj.at(key);
    }

    void unsigned_int(const json& obj, const std::string& path, const char* key)
    {
        const json* v = field(obj, path, key);
        if (v && !(v->is_number_unsigned() || (v->is_number_integer() && v->get<std::int64_t>() >= 0))) {
            fail(path + "." + key, "not an unsigned integer");
        }
    }

    void boolean(const json& obj, const std::string& path, const char* key)
    {
        if (const json* v = field(obj, path, key); v && !v->is_boolean()) fail(path + "." + key, "not a boolean");
    }

    void string(const json& obj, const std::string& path, const char* key)
    {
        if (const json* v = field(obj, path, key); v && !v->is_string()) fail(path + "." + key, "not a string");
    }

    void fraction(const json& obj, const std::string& path, const char* key)
    {
        const json* v = field(obj, path, key);
        if (!v) return;
        if (!v->is_number() || v->get<double>() < 0.0 || v->get<double>() > 1.0) fail(path + "." + key, "not a number in [0, 1]");
    }

    void number_array(const json& obj, const std::string& path, const char* key)
    {
        const json* v = field(obj, path, key);
        if (!v) return;
        if (!v->is_array()) {
            fail(path + "." + key, "not an array");
            return;
        }
        for (const auto& e : *v) {
            if (!e.is_number()) {
                fail(path + "." + key, "contains a non-number");
                return;
            }
        }
    }

    void matrix(const json& obj, const std::string& path, const char* key)
    {
        const json* v = field(obj, path, key);
        if (!v) return;
        if (!v->is_array()) {
            fail(path + "." + key, "not an array");
            return;
        }
        for (const auto& row : *v) {
            if (!row.is_array() || row.size() != v->size()) {
                fail(path + "." + key, "not a square matrix");
                return;
            }
            for (const auto& e : row) {
                if (!e.is_number()) {
                    fail(path + "." + key, "contains a non-number");
                    return;
                }
            }
        }
    }

    void fail(const std::string& path, const std::string& problem) { errors_.push_back(path + ": " + problem); }

private:
    std::vector<std::string>& errors_;
};

void check_eval(Checker& c, const json& r, const std::string& p)
{
    c.unsigned_int(r, p, "n");
    c.fraction(r, p, "overall");
    c.fraction(r, p, "selector");
    c.fraction(r, p, "union");
    c.number_array(r, p, "per_classifier");
}

void check_plan(Checker& c, const json& r, const std::string& p)
{
    c.boolean(r, p, "sliced");
    c.unsigned_int(r, p, "peak_bytes");
    c.unsigned_int(r, p, "peak_step");
    c.number_array(r, p, "live_bytes");
    c.number_array(r, p, "activation_bytes");
    c.unsigned_int(r, p, "total_macs");
    c.unsigned_int(r, p, "parameter_bytes");
    c.unsigned_int(r, p, "flash_traffic_bytes");
    if (r.contains("live_bytes") && r.contains("activation_bytes") && r["live_bytes"].is_array() &&
        r["live_bytes"].size() != r["activation_bytes"].size()) {
        c.fail(p + ".live_bytes", "length differs from activation_bytes");
    }
}

const std::map<std::string, std::function<void(Checker&, const json&)>, std::less<>>& kind_checks()
{
    static const std::map<std::string, std::function<void(Checker&, const json&)>, std::less<>> checks{
        {"eval",
         [](Checker& c, const json& r) {
             check_eval(c, r, "results");
             c.fraction(r, "results", "best_individual");
             c.number_array(r, "results", "routing_counts");
         }},
        {"analyze",
         [](Checker& c, const json& r) {
             c.matrix(r, "results", "cka_matrix");
             c.fraction(r, "results", "union_accuracy");
             c.number_array(r, "results", "per_model_accuracy");
             c.matrix(r, "results", "overlap_matrix");
             c.number_array(r, "results", "exclusive_counts");
             c.unsigned_int(r, "results", "test_size");
             if (const json* ids = c.field(r, "results", "model_ids"); ids && !ids->is_array()) {
                 c.fail("results.model_ids", "not an array");
             }
         }},
        {"plan-memory",
         [](Checker& c, const json& r) {
             c.unsigned_int(r, "results", "classifier");
             const json* plans = c.field(r, "results", "plans");
             if (!plans) return;
             if (!plans->is_object() || plans->empty()) {
                 c.fail("results.plans", "not a non-empty object");
                 return;
             }
             for (const auto& [name, plan] : plans->items()) {
                 if (name != "sliced" && name != "unsliced") c.fail("results.plans." + name, "unknown plan");
                 check_plan(c, plan, "results.plans." + name);
             }
         }},
        {"baseline",
         [](Checker& c, const json& r) {
             c.string(r, "results", "mode");
             c.fraction(r, "results", "accuracy");
             c.unsigned_int(r, "results", "parameter_count");
         }},
        {"train",
         [](Checker& c, const json& r) {
             c.unsigned_int(r, "results", "iterations_run");
             c.boolean(r, "results", "early_stopped");
             if (const json* e = c.field(r, "results", "pretrained")) check_eval(c, *e, "results.pretrained");
             if (const json* e = c.field(r, "results", "final")) check_eval(c, *e, "results.final");
             if (const json* h = c.field(r, "results", "history"); h && !h->is_array()) {
                 c.fail("results.history", "not an array");
             }
         }},
    };
    return checks;
}

void flatten(const json& value, const std::string& path, std::ostringstream& out)
{
    if (value.is_object()) {
        for (const auto& [key, child] : value.items()) flatten(child, path.empty() ? key : path + "." + key, out);
        return;
    }
    if (value.is_array()) {
        bool nested_objects = false;
        for (const auto& e : value) nested_objects = nested_objects || e.is_object();
        if (nested_objects) {
            for (std::size_t i = 0; i < value.size(); ++i) flatten(value[i], path + "." + std::to_string(i), out);
            return;
        }
    }
    out << path << " = " << value.dump() << '\n';
}

}  // namespace

json make_report(std::string_view kind, std::uint64_t seed, json results)
{
    return {{"schema", kReportSchema}, {"version", kReportVersion}, {"kind", kind}, {"seed", seed},
            {"results", std::move(results)}};
}

std::vector<std::string> validate_report(const json& report)
{
    std::vector<std::string> errors;
    Checker c(errors);
    if (!report.is_object()) {
        c.fail("report", "not an object");
        return errors;
    }
    if (const json* s = c.field(report, "report", "schema"); s && *s != kReportSchema) c.fail("report.schema", "unexpected schema");
    if (const json* v = c.field(report, "report", "version"); v && (!v->is_number_integer() || *v != kReportVersion)) {
        c.fail("report.version", "unsupported version");
    }
    c.unsigned_int(report, "report", "seed");
    const json* results = c.field(report, "report", "results");
    if (results && !results->is_object()) {
        c.fail("report.results", "not an object");
        results = nullptr;
    }
    const json* kind = c.field(report, "report", "kind");
    if (!kind) return errors;
    if (!kind->is_string()) {
        c.fail("report.kind", "not a string");
        return errors;
    }
    const auto& checks = kind_checks();
    const auto it = checks.find(kind->get<std::string>());
    if (it == checks.end()) {
        c.fail("report.kind", "unknown kind '" + kind->get<std::string>() + "'");
    } else if (results) {
        it->second(c, *results);
    }
    for (const auto& [key, _] : report.items()) {
        if (key != "schema" && key != "version" && key != "kind" && key != "seed" && key != "results") {
            c.fail("report." + key, "unknown field");
        }
    }
    return errors;
}

std::string text_summary(const json& report)
{
    std::ostringstream out;
    out << "DiTMoS " << report.value("kind", std::string("?")) << " report (schema " << kReportSchema << " v"
        << report.value("version", 0) << ")\n";
    out << "seed = " << report.at("seed").dump() << '\n';
    flatten(report.at("results"), "", out);
    return out.str();
}

void write_report(const std::filesystem::path& dir, std::string_view stem, const json& report)
{
    const auto errors = validate_report(report);
    if (!errors.empty()) throw std::logic_error("invalid report: " + errors.front());
    std::filesystem::create_directories(dir);
    const std::string base(stem);
    std::ofstream js(dir / (base + ".json"));
    std::ofstream txt(dir / (base + ".txt"));
    if (!js || !txt) throw std::runtime_error("cannot write report into " + dir.string());
    js << report.dump(2) << '\n';
    txt << text_summary(report);
}

}  // namespace ditmos::cli
