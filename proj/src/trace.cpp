#include "tracepipe/trace.hpp"

#include <fstream>

namespace tracepipe {

using nlohmann::json;

Answer TraceRecord::stage_answer(StageRole role) const {
  const auto& s = stage(role);
  return s ? s->answer : std::nullopt;
}

bool TraceRecord::has_item_error() const {
  for (const auto& s : stages) {
    if (s && s->error) return true;
  }
  return false;
}

TraceError::TraceError(std::size_t line, const std::string& message)
    : Error(line ? "trace line " + std::to_string(line) + ": " + message : message), line_(line) {}

namespace {

json answer_json(const Answer& a) { return a ? json(to_string(*a)) : json(nullptr); }

Answer answer_from(const json& v) {
  if (v.is_null()) return std::nullopt;
  auto letter = letter_from_string(v.get<std::string>());
  if (!letter) throw TraceError(0, "invalid answer " + v.dump());
  return letter;
}

json stage_json(const StageTrace& s) {
  json usage = s.usage ? json{{"prompt_tokens", s.usage->prompt_tokens},
                              {"completion_tokens", s.usage->completion_tokens}}
                       : json(nullptr);
  return {{"model", s.model},
          {"prompt_sha256", s.prompt_sha256},
          {"raw_output", s.raw_output},
          {"answer", answer_json(s.answer)},
          {"usage", usage},
          {"latency_s", s.latency_s},
          {"cost_nusd", s.cost ? json(s.cost->nano_usd()) : json(nullptr)},
          {"attempts", s.attempts},
          {"error", s.error ? json(*s.error) : json(nullptr)}};
}

StageTrace stage_from(const json& j) {
  StageTrace s;
  s.model = j.at("model").get<std::string>();
  s.prompt_sha256 = j.at("prompt_sha256").get<std::string>();
  s.raw_output = j.at("raw_output").get<std::string>();
  s.answer = answer_from(j.at("answer"));
  if (const auto& u = j.at("usage"); !u.is_null()) {
    s.usage = make_usage(u.at("prompt_tokens").get<std::int64_t>(),
                         u.at("completion_tokens").get<std::int64_t>());
  }
  s.latency_s = j.at("latency_s").get<double>();
  if (const auto& c = j.at("cost_nusd"); !c.is_null()) {
    s.cost = Money::from_nano_usd(c.get<std::int64_t>());
  }
  s.attempts = j.at("attempts").get<int>();
  if (const auto& e = j.at("error"); !e.is_null()) s.error = e.get<std::string>();
  return s;
}

}  // namespace

json to_json(const TraceRecord& r) {
  json stages = json::object();
  for (StageRole role : kAllRoles) {
    if (const auto& s = r.stage(role)) stages[std::string(role_key(role))] = stage_json(*s);
  }
  const BlameFlags& f = r.flags;
  return {{"schema_version", kTraceSchemaVersion},
          {"task_id", r.task_id},
          {"label", r.label},
          {"regime", std::string(to_string(r.regime))},
          {"gold", to_string(r.gold)},
          {"stages", stages},
          {"final", answer_json(r.final_answer)},
          {"flags",
           {{"planner_error", f.planner_error()},
            {"executor_repair", f.executor_repair()},
            {"executor_harm", f.executor_harm()},
            {"critic_repair", f.critic_repair()},
            {"critic_harm", f.critic_harm()}}},
          {"origin", std::string(to_string(r.origin))},
          {"started_at", r.started_at},
          {"finished_at", r.finished_at}};
}

TraceRecord trace_from_json(const json& j) {
  try {
    const int version = j.at("schema_version").get<int>();
    if (version != kTraceSchemaVersion) {
      throw TraceError(0, "unsupported trace schema_version " + std::to_string(version));
    }
    TraceRecord r;
    r.task_id = j.at("task_id").get<std::string>();
    r.label = j.at("label").get<std::string>();
    auto regime = regime_from_string(j.at("regime").get<std::string>());
    if (!regime) throw TraceError(0, "unknown regime " + j.at("regime").dump());
    r.regime = *regime;
    auto gold = letter_from_string(j.at("gold").get<std::string>());
    if (!gold) throw TraceError(0, "invalid gold " + j.at("gold").dump());
    r.gold = *gold;
    const json& stages = j.at("stages");
    for (StageRole role : kAllRoles) {
      if (auto it = stages.find(std::string(role_key(role))); it != stages.end()) {
        r.stages[position(role)] = stage_from(*it);
      }
    }
    r.final_answer = answer_from(j.at("final"));
    const json& f = j.at("flags");
    r.flags = BlameFlags(f.at("planner_error").get<bool>(), f.at("executor_repair").get<bool>(),
                         f.at("executor_harm").get<bool>(), f.at("critic_repair").get<bool>(),
                         f.at("critic_harm").get<bool>());
    auto origin = origin_from_string(j.at("origin").get<std::string>());
    if (!origin) throw TraceError(0, "unknown origin " + j.at("origin").dump());
    r.origin = *origin;
    r.started_at = j.at("started_at").get<std::string>();
    r.finished_at = j.at("finished_at").get<std::string>();
    return r;
  } catch (const json::exception& e) {
    throw TraceError(0, e.what());
  } catch (const std::logic_error& e) {
    throw TraceError(0, e.what());
  }
}

std::string to_jsonl_line(const TraceRecord& record) { return to_json(record).dump(); }

std::vector<TraceRecord> read_traces(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TraceError(0, "cannot open trace file '" + path.string() + "'");
  std::vector<TraceRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(trace_from_json(json::parse(line)));
    } catch (const json::parse_error& e) {
      throw TraceError(line_no, std::string("corrupt record: ") + e.what());
    } catch (const TraceError& e) {
      throw TraceError(line_no, e.what());
    }
  }
  return out;
}

}  // namespace tracepipe
