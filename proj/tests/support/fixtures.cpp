#include "support/fixtures.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "rano/nifti.hpp"

namespace fs = std::filesystem;

namespace rano::testsupport {

namespace {

const char* kAllModalities[4] = {"CT1", "T1W", "T2W", "FLAIR"};

// Head-like phantom: a bright centered ellipsoid so center-of-mass
// registration onto the fixture template is well posed.
VolumeGrid phantom_volume(std::array<int64_t, 3> dims, float brightness) {
  VolumeGrid v = VolumeGrid::filled(dims, 0.f);
  for (int64_t z = 0; z < dims[2]; ++z) {
    for (int64_t y = 0; y < dims[1]; ++y) {
      for (int64_t x = 0; x < dims[0]; ++x) {
        const double dx = (static_cast<double>(x) / (dims[0] - 1) - 0.5) * 2.2;
        const double dy = (static_cast<double>(y) / (dims[1] - 1) - 0.5) * 2.2;
        const double dz = (static_cast<double>(z) / (dims[2] - 1) - 0.5) * 2.2;
        const double r2 = dx * dx + dy * dy + dz * dz;
        if (r2 < 1.0) v.at(x, y, z) = brightness * static_cast<float>(1.0 - 0.5 * r2);
      }
    }
  }
  return v;
}

void write_session_volumes(const fs::path& dir, const std::vector<std::string>& modalities,
                           std::array<int64_t, 3> dims, std::mt19937_64& rng) {
  fs::create_directories(dir);
  std::normal_distribution<float> noise(0.f, 4.f);
  std::uniform_real_distribution<float> bright(80.f, 120.f);
  for (const auto& m : modalities) {
    VolumeGrid v = phantom_volume(dims, bright(rng));
    for (auto& x : v.voxels) {
      if (x > 0.f) x = std::max(1.f, x + noise(rng));
    }
    write_nifti(v, dir / (m + ".nii.gz"));
  }
}

void write_template(const fs::path& root, std::array<int64_t, 3> dims) {
  write_nifti(phantom_volume(dims, 100.f), root / "template.nii.gz");
}

void write_tables(const fs::path& root, FixtureTruth& truth, std::mt19937_64& rng) {
  truth.metadata_csv = root / "metadata.csv";
  std::ofstream meta(truth.metadata_csv);
  meta << "patient_id,week,rano,surgery_week,extra_column\n";
  for (const auto& s : truth.sessions) {
    auto it = truth.surgery_week.find(s.patient_id);
    meta << s.patient_id << "," << s.week << "," << s.label << ","
         << (it == truth.surgery_week.end() ? std::string("NA") : std::to_string(it->second))
         << ",ignored\n";
  }

  truth.clinical_csv = root / "clinical.csv";
  std::ofstream clin(truth.clinical_csv);
  clin << "patient_id,age_at_surgery,sex,idh,mgmt,survival_weeks\n";
  std::set<std::string> seen;
  const char* idh[4] = {"wildtype", "IDH1_negative", "mutant", "NA"};
  const char* mgmt[3] = {"methylated", "unmethylated", "NA"};
  for (const auto& s : truth.sessions) {
    if (!seen.insert(s.patient_id).second) continue;
    std::uniform_int_distribution<int> age(40, 80);
    std::uniform_int_distribution<int> pick4(0, 3), pick3(0, 2), pick2(0, 1);
    clin << s.patient_id << "," << age(rng) << "," << (pick2(rng) ? "M" : "F") << ","
         << idh[pick4(rng)] << "," << mgmt[pick3(rng)] << "," << age(rng) << "\n";
  }
}

}  // namespace

FixtureTruth write_lumiere_fixture(const fs::path& root, const FixtureSpec& spec) {
  fs::create_directories(root);
  std::mt19937_64 rng(spec.seed);
  FixtureTruth truth;

  const char* labels[7] = {"PD", "SD", "PR", "CR", "Pre-Op", "Post-Op", ""};
  std::discrete_distribution<int> label_dist({40, 15, 4, 5, 10, 10, 16});

  for (int p = 0; p < spec.n_patients; ++p) {
    char pid[32];
    std::snprintf(pid, sizeof(pid), "Patient-%03d", p + 1);
    std::uniform_int_distribution<int> n_sessions(spec.min_sessions, spec.max_sessions);
    std::uniform_real_distribution<double> u(0.0, 1.0);

    if (u(rng) >= spec.missing_surgery_prob) truth.surgery_week[pid] = 0;

    const int count = n_sessions(rng);
    int week = -2;
    for (int s = 0; s < count; ++s) {
      std::uniform_int_distribution<int> gap(2, 18);
      FixtureSession sess;
      sess.patient_id = pid;
      sess.week = week;
      sess.label = labels[label_dist(rng)];
      for (const char* m : kAllModalities) {
        if (u(rng) < 0.8) sess.modalities.push_back(m);
      }
      week += gap(rng);
      write_session_volumes(root / pid / ("week-" + std::to_string(sess.week)), sess.modalities,
                            spec.vol_dims, rng);
      truth.sessions.push_back(std::move(sess));
    }
  }
  write_template(root, spec.vol_dims);
  write_tables(root, truth, rng);
  return truth;
}

FixtureTruth write_small_fixture(const fs::path& root) {
  fs::create_directories(root);
  std::mt19937_64 rng(7);
  FixtureTruth truth;
  truth.surgery_week = {{"Patient-001", 0}, {"Patient-002", 0}, {"Patient-003", 4}};
  truth.sessions = {
      {"Patient-001", -1, "Pre-Op", {"CT1", "T1W", "T2W", "FLAIR"}},
      {"Patient-001", 20, "SD", {"CT1", "T1W", "T2W", "FLAIR"}},
      {"Patient-001", 33, "PD", {"CT1", "FLAIR"}},
      {"Patient-002", 15, "SD", {"T1W", "FLAIR"}},
      {"Patient-002", 29, "CR", {"T1W", "T2W", "FLAIR"}},
      {"Patient-003", 2, "Post-Op", {"CT1"}},
      {"Patient-003", 25, "PR", {}},
  };
  for (const auto& s : truth.sessions) {
    write_session_volumes(root / s.patient_id / ("week-" + std::to_string(s.week)), s.modalities,
                          {4, 4, 4}, rng);
  }
  write_template(root, {4, 4, 4});
  write_tables(root, truth, rng);
  return truth;
}

std::vector<TimepointRecord> oracle_filter(const std::vector<TimepointRecord>& records,
                                           const std::map<std::string, int>& surgery_week,
                                           int min_gap_weeks) {
  std::vector<TimepointRecord> out;
  for (const auto& r : records) {
    bool labeled = r.label == RanoLabel::PD || r.label == RanoLabel::SD ||
                   r.label == RanoLabel::PR || r.label == RanoLabel::CR;
    if (!labeled) continue;
    auto it = surgery_week.find(r.patient_id);
    if (it == surgery_week.end()) continue;
    if (r.week - it->second < min_gap_weeks) continue;
    bool any_modality = false;
    for (int m = 0; m < 4; ++m) {
      if (r.available.contains(static_cast<Modality>(m))) any_modality = true;
    }
    if (!any_modality) continue;
    out.push_back(r);
  }
  return out;
}

std::vector<OraclePair> oracle_pairs(const std::vector<TimepointRecord>& filtered,
                                     ModalitySet modalities) {
  std::set<std::string> patients;
  for (const auto& r : filtered) patients.insert(r.patient_id);

  std::vector<OraclePair> out;
  for (const auto& pid : patients) {
    std::vector<const TimepointRecord*> recs;
    for (const auto& r : filtered) {
      if (r.patient_id == pid) recs.push_back(&r);
    }
    std::sort(recs.begin(), recs.end(),
              [](const TimepointRecord* a, const TimepointRecord* b) { return a->week < b->week; });
    for (size_t i = 0; i + 1 < recs.size(); ++i) {
      bool both = true;
      for (Modality m : modalities.list()) {
        if (!recs[i]->available.contains(m) || !recs[i + 1]->available.contains(m)) both = false;
      }
      if (!both) continue;
      out.push_back({pid, recs[i]->week, recs[i + 1]->week, recs[i + 1]->label});
    }
  }
  return out;
}

std::vector<TimepointRecord> random_records(std::mt19937_64& rng, int n_patients,
                                            std::map<std::string, int>* surgery_week) {
  std::vector<TimepointRecord> out;
  std::uniform_int_distribution<int> n_sessions(1, 8);
  std::uniform_int_distribution<int> gap(1, 20);
  std::uniform_int_distribution<int> label(0, 6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int p = 0; p < n_patients; ++p) {
    const std::string pid = "P" + std::to_string(p);
    if (surgery_week && u(rng) < 0.9) (*surgery_week)[pid] = 0;
    int week = -3;
    const int count = n_sessions(rng);
    for (int s = 0; s < count; ++s) {
      TimepointRecord r;
      r.patient_id = pid;
      r.week = week;
      week += gap(rng);
      r.label = static_cast<RanoLabel>(label(rng));
      for (int m = 0; m < 4; ++m) {
        if (u(rng) < 0.75) {
          r.available.insert(static_cast<Modality>(m));
          r.image_paths[static_cast<Modality>(m)] = "mem://" + pid + "/" + std::to_string(r.week);
        }
      }
      out.push_back(std::move(r));
    }
  }
  return out;
}

VolumeGrid random_volume(std::array<int64_t, 3> dims, std::mt19937_64& rng, float mean,
                         float stddev) {
  VolumeGrid v = VolumeGrid::filled(dims, 0.f);
  std::normal_distribution<float> dist(mean, stddev);
  for (auto& x : v.voxels) x = dist(rng);
  return v;
}

std::vector<rano::train::TrainingSample> toy_separable_samples(int n, std::array<int64_t, 3> dims,
                                                               uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> noise(0.f, 0.05f);
  std::vector<rano::train::TrainingSample> out;
  for (int i = 0; i < n; ++i) {
    rano::train::TrainingSample s;
    s.id = "toy-" + std::to_string(seed) + "-" + std::to_string(i);
    s.label = i % 2;
    s.channels = rano::nn::Tensor::zeros({1, dims[0], dims[1], dims[2]});
    const int64_t half0 = dims[0] / 2, half1 = dims[1] / 2, half2 = dims[2] / 2;
    for (int64_t z = 0; z < dims[2]; ++z) {
      for (int64_t y = 0; y < dims[1]; ++y) {
        for (int64_t x = 0; x < dims[0]; ++x) {
          const bool low = x < half0 && y < half1 && z < half2;
          const bool high = x >= half0 && y >= half1 && z >= half2;
          float v = noise(rng);
          if ((s.label == 0 && low) || (s.label == 1 && high)) v += 1.0f;
          s.channels.data[static_cast<size_t>((z * dims[1] + y) * dims[0] + x)] = v;
        }
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace rano::testsupport
