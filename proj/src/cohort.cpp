#include "rano/cohort.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "rano/csv.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace rano {

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

}  // namespace

std::string to_string(RanoLabel l) {
  switch (l) {
    case RanoLabel::PD: return "PD";
    case RanoLabel::SD: return "SD";
    case RanoLabel::PR: return "PR";
    case RanoLabel::CR: return "CR";
    case RanoLabel::PreOp: return "Pre-Op";
    case RanoLabel::PostOp: return "Post-Op";
    default: return "Unlabeled";
  }
}

std::optional<RanoLabel> parse_rano_label(std::string label_text) {
  const std::string s = lower(label_text);
  if (s == "pd") return RanoLabel::PD;
  if (s == "sd") return RanoLabel::SD;
  if (s == "pr") return RanoLabel::PR;
  if (s == "cr") return RanoLabel::CR;
  if (s == "pre-op" || s == "preop" || s == "pre-operative") return RanoLabel::PreOp;
  if (s == "post-op" || s == "postop" || s == "post-operative") return RanoLabel::PostOp;
  if (s.empty() || s == "na" || s == "none" || s == "unlabeled") return RanoLabel::Unlabeled;
  return std::nullopt;
}

std::string to_string(Modality m) {
  switch (m) {
    case Modality::CT1: return "CT1";
    case Modality::T1W: return "T1W";
    case Modality::T2W: return "T2W";
    default: return "FLAIR";
  }
}

std::optional<Modality> parse_modality(const std::string& s) {
  const std::string u = lower(s);
  if (u == "ct1") return Modality::CT1;
  if (u == "t1w" || u == "t1") return Modality::T1W;
  if (u == "t2w" || u == "t2") return Modality::T2W;
  if (u == "flair") return Modality::FLAIR;
  return std::nullopt;
}

int ModalitySet::count() const {
  int n = 0;
  for (int i = 0; i < 4; ++i) n += (mask_ >> i) & 1;
  return n;
}

std::vector<Modality> ModalitySet::list() const {
  std::vector<Modality> out;
  for (int i = 0; i < 4; ++i) {
    if (mask_ & (1u << i)) out.push_back(static_cast<Modality>(i));
  }
  return out;
}

std::string ModalitySet::str() const {
  std::string out;
  for (Modality m : list()) {
    if (!out.empty()) out += "+";
    out += to_string(m);
  }
  return out;
}

std::optional<ModalitySet> ModalitySet::parse(const std::string& s) {
  ModalitySet set;
  std::string token;
  for (size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == '+' || s[i] == ',') {
      if (!token.empty()) {
        auto m = parse_modality(token);
        if (!m) return std::nullopt;
        set.insert(*m);
        token.clear();
      }
    } else if (!std::isspace(static_cast<unsigned char>(s[i]))) {
      token += s[i];
    }
  }
  return set;
}

ModalitySet ModalitySet::all() {
  return ModalitySet{Modality::CT1, Modality::T1W, Modality::T2W, Modality::FLAIR};
}

// ---------------------------------------------------------------------------
// index_dataset
// ---------------------------------------------------------------------------

namespace {

std::optional<int> parse_week_dir(const std::string& name) {
  constexpr std::string_view prefix = "week-";
  if (name.rfind(prefix, 0) != 0) return std::nullopt;
  const std::string num = name.substr(prefix.size());
  if (num.empty()) return std::nullopt;
  try {
    size_t pos = 0;
    int week = std::stoi(num, &pos);
    if (pos != num.size()) return std::nullopt;
    return week;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

std::optional<Modality> modality_from_filename(const fs::path& p) {
  std::string stem = p.filename().string();
  // strip ".nii" / ".nii.gz"
  if (stem.size() > 3 && stem.ends_with(".gz")) stem = stem.substr(0, stem.size() - 3);
  if (stem.size() > 4 && stem.ends_with(".nii")) stem = stem.substr(0, stem.size() - 4);
  else return std::nullopt;
  return parse_modality(stem);
}

}  // namespace

DatasetIndex index_dataset(const fs::path& root, const fs::path& metadata_table) {
  if (!fs::is_directory(root)) throw Error("dataset root does not exist: " + root.string());

  DatasetIndex index;

  struct MetaRow {
    RanoLabel label = RanoLabel::Unlabeled;
    bool on_disk = false;
  };
  std::map<std::string, std::map<int, MetaRow>> meta;  // patient -> week -> row

  const Table table = read_delim(metadata_table);
  table.require_columns({"patient_id", "week", "rano", "surgery_week"});
  const size_t c_pid = *table.col("patient_id");
  const size_t c_week = *table.col("week");
  const size_t c_rano = *table.col("rano");
  const size_t c_surgery = *table.col("surgery_week");

  for (size_t r = 0; r < table.rows.size(); ++r) {
    const std::string ctx = "metadata row " + std::to_string(r + 2);
    const std::string pid = table.cell(r, c_pid);
    if (pid.empty()) {
      index.issues.push_back({ctx, "empty patient_id"});
      continue;
    }
    int week = 0;
    try {
      week = std::stoi(table.cell(r, c_week));
    } catch (const std::exception&) {
      index.issues.push_back({ctx, "unparseable week '" + table.cell(r, c_week) + "'"});
      continue;
    }
    const auto label = parse_rano_label(table.cell(r, c_rano));
    if (!label) {
      index.issues.push_back({ctx, "unknown RANO label '" + table.cell(r, c_rano) + "'"});
      continue;
    }
    if (meta[pid].count(week)) {
      throw Error("duplicate (patient, week) in metadata: " + pid + ", week " + std::to_string(week));
    }
    meta[pid][week] = MetaRow{*label, false};

    const std::string surgery = table.cell(r, c_surgery);
    if (!surgery.empty() && lower(surgery) != "na") {
      try {
        const int sw = std::stoi(surgery);
        auto it = index.surgery_week.find(pid);
        if (it != index.surgery_week.end() && it->second != sw) {
          index.issues.push_back({ctx, "conflicting surgery_week for patient " + pid});
        } else {
          index.surgery_week[pid] = sw;
        }
      } catch (const std::exception&) {
        index.issues.push_back({ctx, "unparseable surgery_week '" + surgery + "'"});
      }
    }
  }

  // Disk walk: one record per session directory.
  std::map<std::string, std::map<int, TimepointRecord>> per_patient;
  std::vector<fs::path> patient_dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) patient_dirs.push_back(e.path());
  }
  std::sort(patient_dirs.begin(), patient_dirs.end());

  for (const auto& pdir : patient_dirs) {
    const std::string pid = pdir.filename().string();
    for (const auto& e : fs::directory_iterator(pdir)) {
      if (!e.is_directory()) continue;
      const auto week = parse_week_dir(e.path().filename().string());
      if (!week) {
        index.issues.push_back({pid + "/" + e.path().filename().string(), "unrecognized session directory name"});
        continue;
      }
      if (per_patient[pid].count(*week)) {
        throw Error("duplicate session on disk: " + pid + ", week " + std::to_string(*week));
      }
      TimepointRecord rec;
      rec.patient_id = pid;
      rec.week = *week;
      for (const auto& f : fs::directory_iterator(e.path())) {
        if (!f.is_regular_file()) continue;
        const auto m = modality_from_filename(f.path());
        if (m) {
          rec.available.insert(*m);
          rec.image_paths[*m] = f.path();
        }
      }
      auto mit = meta.find(pid);
      if (mit != meta.end()) {
        auto wit = mit->second.find(*week);
        if (wit != mit->second.end()) {
          rec.label = wit->second.label;
          wit->second.on_disk = true;
        } else {
          index.issues.push_back({pid + "/week-" + std::to_string(*week), "session has no metadata row; left unlabeled"});
        }
      } else {
        index.issues.push_back({pid + "/week-" + std::to_string(*week), "patient missing from metadata; left unlabeled"});
      }
      per_patient[pid][*week] = std::move(rec);
    }
  }

  // Metadata rows without a matching session still become (image-less)
  // records so pre-filter label censuses cover the whole table.
  for (const auto& [pid, weeks] : meta) {
    for (const auto& [week, row] : weeks) {
      if (row.on_disk) continue;
      if (per_patient[pid].count(week)) continue;
      TimepointRecord rec;
      rec.patient_id = pid;
      rec.week = week;
      rec.label = row.label;
      per_patient[pid][week] = std::move(rec);
    }
  }

  for (auto& [pid, weeks] : per_patient) {
    for (auto& [week, rec] : weeks) index.records.push_back(std::move(rec));
  }
  return index;
}

std::map<std::string, ClinicalVector> load_clinical(const fs::path& table_path,
                                                    std::vector<IndexIssue>* issues) {
  auto note = [&](const std::string& ctx, const std::string& msg) {
    if (issues) issues->push_back({ctx, msg});
  };

  const Table table = read_delim(table_path);
  table.require_columns({"patient_id", "age_at_surgery", "sex", "idh", "mgmt"});
  const size_t c_pid = *table.col("patient_id");
  const size_t c_age = *table.col("age_at_surgery");
  const size_t c_sex = *table.col("sex");
  const size_t c_idh = *table.col("idh");
  const size_t c_mgmt = *table.col("mgmt");
  const auto c_survival = table.col("survival_weeks");

  std::map<std::string, ClinicalVector> out;
  for (size_t r = 0; r < table.rows.size(); ++r) {
    const std::string ctx = "clinical row " + std::to_string(r + 2);
    const std::string pid = table.cell(r, c_pid);
    if (pid.empty()) {
      note(ctx, "empty patient_id");
      continue;
    }
    ClinicalVector cv;
    try {
      cv.age_at_surgery = std::stod(table.cell(r, c_age));
    } catch (const std::exception&) {
      note(ctx, "unparseable age; row dropped");
      continue;
    }
    const std::string sex = lower(table.cell(r, c_sex));
    if (sex == "m" || sex == "male") cv.sex = Sex::M;
    else if (sex == "f" || sex == "female") cv.sex = Sex::F;
    else {
      note(ctx, "unparseable sex; row dropped");
      continue;
    }
    const std::string idh = lower(table.cell(r, c_idh));
    if (idh == "wildtype") cv.idh = IdhStatus::wildtype;
    else if (idh == "idh1_negative" || idh == "idh1-negative") cv.idh = IdhStatus::IDH1_negative;
    else if (idh == "mutant") cv.idh = IdhStatus::mutant;
    else {
      cv.idh = IdhStatus::missing;
      if (!idh.empty() && idh != "na" && idh != "missing") note(ctx, "unknown idh '" + idh + "'; treated as missing");
    }
    const std::string mgmt = lower(table.cell(r, c_mgmt));
    if (mgmt == "methylated") cv.mgmt = MgmtStatus::methylated;
    else if (mgmt == "unmethylated" || mgmt == "not methylated") cv.mgmt = MgmtStatus::unmethylated;
    else {
      cv.mgmt = MgmtStatus::missing;
      if (!mgmt.empty() && mgmt != "na" && mgmt != "missing") note(ctx, "unknown mgmt '" + mgmt + "'; treated as missing");
    }
    if (c_survival) {
      const std::string sv = table.cell(r, *c_survival);
      if (!sv.empty() && lower(sv) != "na") {
        try {
          cv.survival_weeks = std::stod(sv);
        } catch (const std::exception&) {
          note(ctx, "unparseable survival_weeks; left missing");
        }
      }
    }
    out[pid] = cv;
  }
  return out;
}

// ---------------------------------------------------------------------------
// filter / pair / summary
// ---------------------------------------------------------------------------

std::vector<TimepointRecord> filter_timepoints(const std::vector<TimepointRecord>& records,
                                               const std::map<std::string, int>& surgery_week,
                                               int min_gap_weeks) {
  std::vector<TimepointRecord> out;
  std::set<std::string> missing_surgery;
  for (const auto& rec : records) {
    if (!is_trainable(rec.label)) continue;
    auto it = surgery_week.find(rec.patient_id);
    if (it == surgery_week.end()) {
      missing_surgery.insert(rec.patient_id);
      continue;
    }
    if (rec.week - it->second < min_gap_weeks) continue;
    if (rec.available.empty()) continue;
    out.push_back(rec);
  }
  for (const auto& pid : missing_surgery) {
    log::warn("patient " + pid + " has no surgery week; all its timepoints were excluded");
  }
  return out;
}

std::vector<StudySample> pair_consecutive(const std::vector<TimepointRecord>& filtered,
                                          ModalitySet modalities) {
  std::map<std::string, std::vector<const TimepointRecord*>> by_patient;
  for (const auto& rec : filtered) by_patient[rec.patient_id].push_back(&rec);

  std::vector<StudySample> out;
  for (auto& [pid, recs] : by_patient) {
    std::sort(recs.begin(), recs.end(),
              [](const TimepointRecord* a, const TimepointRecord* b) { return a->week < b->week; });
    for (size_t i = 1; i < recs.size(); ++i) {
      const TimepointRecord& prev = *recs[i - 1];
      const TimepointRecord& curr = *recs[i];
      if (!prev.available.contains_all(modalities) || !curr.available.contains_all(modalities)) {
        continue;  // both endpoints must carry the requested set
      }
      StudySample s;
      s.patient_id = pid;
      s.prev = prev;
      s.curr = curr;
      s.modalities = modalities;
      s.label = curr.label;
      out.push_back(std::move(s));
    }
  }
  return out;
}

CohortSummary cohort_summary(const std::vector<StudySample>& samples) {
  if (samples.empty()) throw Error("cohort_summary: empty cohort");
  CohortSummary s;
  for (const auto& sample : samples) {
    if (!is_trainable(sample.label)) throw Error("cohort_summary: untrainable label in sample " + sample.id());
    s.counts[static_cast<int>(sample.label)]++;
  }
  s.total = static_cast<int64_t>(samples.size());
  for (int c = 0; c < kNumClasses; ++c) {
    s.prevalence[c] = static_cast<double>(s.counts[c]) / static_cast<double>(s.total);
  }
  return s;
}

std::array<int64_t, kNumClasses> label_census(const std::vector<TimepointRecord>& records) {
  std::array<int64_t, kNumClasses> counts{};
  for (const auto& rec : records) {
    if (is_trainable(rec.label)) counts[static_cast<int>(rec.label)]++;
  }
  return counts;
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

namespace {

json timepoint_to_json(const TimepointRecord& rec) {
  json paths = json::object();
  for (const auto& [m, p] : rec.image_paths) paths[to_string(m)] = p.string();
  return json{{"patient_id", rec.patient_id},
              {"week", rec.week},
              {"label", to_string(rec.label)},
              {"paths", paths}};
}

TimepointRecord timepoint_from_json(const json& j) {
  TimepointRecord rec;
  rec.patient_id = j.at("patient_id").get<std::string>();
  rec.week = j.at("week").get<int>();
  const auto label = parse_rano_label(j.at("label").get<std::string>());
  if (!label) throw Error("manifest: bad label " + j.at("label").dump());
  rec.label = *label;
  for (const auto& [key, value] : j.at("paths").items()) {
    const auto m = parse_modality(key);
    if (!m) throw Error("manifest: bad modality " + key);
    rec.available.insert(*m);
    rec.image_paths[*m] = fs::path(value.get<std::string>());
  }
  return rec;
}

}  // namespace

void write_manifest(const std::vector<StudySample>& samples, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write manifest: " + path.string());
  for (const auto& s : samples) {
    json j{{"patient_id", s.patient_id},
           {"label", to_string(s.label)},
           {"modalities", s.modalities.str()},
           {"prev", timepoint_to_json(s.prev)},
           {"curr", timepoint_to_json(s.curr)}};
    out << j.dump() << "\n";
  }
}

std::vector<StudySample> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read manifest: " + path.string());
  std::vector<StudySample> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw Error("manifest line " + std::to_string(lineno) + ": " + e.what());
    }
    StudySample s;
    s.patient_id = j.at("patient_id").get<std::string>();
    const auto label = parse_rano_label(j.at("label").get<std::string>());
    if (!label) throw Error("manifest line " + std::to_string(lineno) + ": bad label");
    s.label = *label;
    const auto mods = ModalitySet::parse(j.at("modalities").get<std::string>());
    if (!mods) throw Error("manifest line " + std::to_string(lineno) + ": bad modalities");
    s.modalities = *mods;
    s.prev = timepoint_from_json(j.at("prev"));
    s.curr = timepoint_from_json(j.at("curr"));
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace rano
