#include "deconf/dataset.hpp"

#include <cmath>
#include <string>

#include "deconf/csv.hpp"
#include "deconf/datagen.hpp"

namespace deconf::datagen {

namespace {

nlohmann::ordered_json config_json(const SimConfig& cfg) {
  nlohmann::ordered_json j;
  j["users"] = cfg.users;
  j["items"] = cfg.items;
  j["latent_dim"] = cfg.latent_dim;
  j["feature_dim"] = cfg.feature_dim;
  j["gamma_theta"] = cfg.gamma_theta;
  j["gamma_b"] = cfg.gamma_b;
  j["exposure_rate"] = cfg.exposure_rate;
  j["feature_noise"] = cfg.feature_noise;
  j["seed"] = cfg.seed;
  return j;
}

SimConfig config_from_json(const nlohmann::ordered_json& j) {
  SimConfig cfg;
  cfg.users = j.at("users").get<std::size_t>();
  cfg.items = j.at("items").get<std::size_t>();
  cfg.latent_dim = j.at("latent_dim").get<std::size_t>();
  cfg.feature_dim = j.at("feature_dim").get<std::size_t>();
  cfg.gamma_theta = j.at("gamma_theta").get<double>();
  cfg.gamma_b = j.at("gamma_b").get<double>();
  cfg.exposure_rate = j.at("exposure_rate").get<double>();
  cfg.feature_noise = j.at("feature_noise").get<double>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  return cfg;
}

std::vector<std::size_t> rating_histogram(const ByteMatrix& m,
                                          const ByteMatrix* mask) {
  std::vector<std::size_t> h(5, 0);
  for (std::size_t n = 0; n < m.data.size(); ++n) {
    if (mask && !mask->data[n]) continue;
    const int r = m.data[n];
    if (r >= 1 && r <= 5) ++h[r - 1];
  }
  return h;
}

}  // namespace

nlohmann::ordered_json make_manifest(const CausalDataset& ds,
                                     const std::string& config_hash) {
  nlohmann::ordered_json m;
  m["format"] = "deconf-bundle-v1";
  m["version"] = kVersion;
  m["config_hash"] = config_hash;
  m["kind"] = ds.source_path.empty() ? "simulated" : "semisynthetic";
  m["config"] = config_json(ds.config);
  m["users"] = ds.users();
  m["items"] = ds.items();

  const std::size_t n_exp = ds.exposure_count();
  m["exposure_count"] = n_exp;
  const double rate = static_cast<double>(n_exp) /
                      static_cast<double>(ds.users() * ds.items());
  m["exposure_rate"] = rate;
  m["density_percent"] = 100.0 * rate;

  double mean_exp = 0.0;
  double m2 = 0.0;
  for (std::size_t u = 0; u < ds.users(); ++u) {
    std::size_t c = 0;
    for (std::size_t i = 0; i < ds.items(); ++i) c += ds.exposures.at(u, i);
    const double x = static_cast<double>(c);
    const double delta = x - mean_exp;
    mean_exp += delta / static_cast<double>(u + 1);
    m2 += delta * (x - mean_exp);
  }
  m["avg_exposures_per_user"] = mean_exp;
  m["std_exposures_per_user"] =
      ds.users() > 1 ? std::sqrt(m2 / static_cast<double>(ds.users())) : 0.0;

  m["rating_histogram_population"] = rating_histogram(ds.ratings_full, nullptr);
  m["rating_histogram_observed"] =
      rating_histogram(ds.ratings_full, &ds.exposures);

  auto repair_log = nlohmann::ordered_json::array();
  for (const auto& r : ds.repairs) {
    nlohmann::ordered_json e;
    e["user"] = r.user;
    e["exposed_item"] = r.exposed_item;
    e["removed_other"] = r.removed_other;
    if (r.removed_other) {
      e["removed_user"] = r.removed_user;
      e["removed_item"] = r.removed_item;
    }
    repair_log.push_back(e);
  }
  m["repairs"] = repair_log;
  m["warnings"] = ds.warnings;

  if (!ds.source_path.empty()) {
    nlohmann::ordered_json src;
    src["path"] = ds.source_path;
    src["rating_histogram"] = ds.source_rating_histogram;
    src["exposure_rate"] = ds.source_exposure_rate;
    src["user_ids"] = ds.source_user_ids;
    src["item_ids"] = ds.source_item_ids;
    m["source"] = src;
  }
  return m;
}

void write_bundle(const std::filesystem::path& dir, const CausalDataset& ds,
                  const std::string& config_hash) {
  std::filesystem::create_directories(dir);

  const auto manifest_path = dir / "manifest.json";
  if (std::filesystem::exists(manifest_path)) {
    const auto existing =
        nlohmann::ordered_json::parse(io::read_text(manifest_path));
    const std::string old_hash = existing.value("config_hash", "");
    if (!old_hash.empty() && old_hash != config_hash) {
      throw ConfigError("refusing to overwrite bundle at " + dir.string() +
                        ": existing config_hash " + old_hash +
                        " differs from " + config_hash);
    }
  }

  io::write_dense_byte_csv(dir / "ratings_full.csv", ds.ratings_full,
                           "config_hash=" + config_hash);

  std::vector<io::Triplet> obs;
  std::vector<io::Triplet> exp;
  for (std::size_t u = 0; u < ds.users(); ++u) {
    for (std::size_t i = 0; i < ds.items(); ++i) {
      if (ds.exposures.at(u, i)) {
        exp.push_back({static_cast<std::uint32_t>(u),
                       static_cast<std::uint32_t>(i), 1.0});
        obs.push_back({static_cast<std::uint32_t>(u),
                       static_cast<std::uint32_t>(i),
                       static_cast<double>(ds.ratings_obs.at(u, i))});
      }
    }
  }
  io::write_triplet_csv(dir / "ratings_obs.csv", obs, "u,i,v",
                        "config_hash=" + config_hash);
  io::write_triplet_csv(dir / "exposures.csv", exp, "u,i,v",
                        "config_hash=" + config_hash);

  std::vector<std::string> fheader;
  for (std::size_t j = 0; j < ds.features.cols; ++j) {
    fheader.push_back("f" + std::to_string(j));
  }
  io::write_dense_csv(dir / "features.csv", ds.features, fheader,
                      "config_hash=" + config_hash);

  std::vector<std::string> cheader;
  for (std::size_t j = 0; j < ds.confounders_true.cols; ++j) {
    cheader.push_back("c" + std::to_string(j));
  }
  io::write_dense_csv(dir / "confounders_true.csv", ds.confounders_true,
                      cheader, "config_hash=" + config_hash);

  io::write_text_atomic(manifest_path,
                        make_manifest(ds, config_hash).dump(2) + "\n");
}

CausalDataset load_bundle(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  nlohmann::ordered_json m;
  try {
    m = nlohmann::ordered_json::parse(io::read_text(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad bundle manifest " + manifest_path.string() + ": " +
                  e.what());
  }
  if (m.value("format", "") != "deconf-bundle-v1") {
    throw IoError("unrecognized bundle format in " + manifest_path.string());
  }

  CausalDataset ds;
  ds.config = config_from_json(m.at("config"));
  const std::size_t users = m.at("users").get<std::size_t>();
  const std::size_t items = m.at("items").get<std::size_t>();

  ds.ratings_full = io::read_dense_byte_csv(dir / "ratings_full.csv");
  if (ds.ratings_full.rows != users || ds.ratings_full.cols != items) {
    throw IoError("ratings_full.csv does not match manifest dims");
  }
  ds.exposures = ByteMatrix(users, items);
  for (const auto& t : io::read_triplet_csv(dir / "exposures.csv")) {
    if (t.row >= users || t.col >= items) {
      throw IoError("exposures.csv index out of range");
    }
    ds.exposures.at(t.row, t.col) = 1;
  }
  ds.ratings_obs = ByteMatrix(users, items);
  for (const auto& t : io::read_triplet_csv(dir / "ratings_obs.csv")) {
    if (t.row >= users || t.col >= items) {
      throw IoError("ratings_obs.csv index out of range");
    }
    ds.ratings_obs.at(t.row, t.col) = static_cast<std::uint8_t>(t.value);
  }
  ds.features = io::read_dense_csv(dir / "features.csv", /*expect_header=*/true);
  ds.confounders_true =
      io::read_dense_csv(dir / "confounders_true.csv", /*expect_header=*/true);

  for (const auto& r : m.at("repairs")) {
    RepairEvent ev;
    ev.user = r.at("user").get<std::size_t>();
    ev.exposed_item = r.at("exposed_item").get<std::size_t>();
    ev.removed_other = r.at("removed_other").get<bool>();
    if (ev.removed_other) {
      ev.removed_user = r.at("removed_user").get<std::size_t>();
      ev.removed_item = r.at("removed_item").get<std::size_t>();
    }
    ds.repairs.push_back(ev);
  }
  ds.warnings = m.at("warnings").get<std::vector<std::string>>();
  if (m.contains("source")) {
    const auto& src = m.at("source");
    ds.source_path = src.at("path").get<std::string>();
    ds.source_rating_histogram =
        src.at("rating_histogram").get<std::vector<std::size_t>>();
    ds.source_exposure_rate = src.at("exposure_rate").get<double>();
    ds.source_user_ids = src.at("user_ids").get<std::vector<std::string>>();
    ds.source_item_ids = src.at("item_ids").get<std::vector<std::string>>();
  }
  return ds;
}

AuditReport audit_dataset(const CausalDataset& ds) {
  AuditReport report;
  auto fail = [&report](const std::string& msg) {
    report.ok = false;
    report.violations.push_back(msg);
  };

  const std::size_t users = ds.users();
  const std::size_t items = ds.items();
  if (users == 0 || items == 0) {
    fail("empty dataset");
    return report;
  }

  for (std::size_t n = 0; n < ds.ratings_full.data.size(); ++n) {
    const int r = ds.ratings_full.data[n];
    if (r < 1 || r > 5) {
      fail("population rating outside 1..5 at cell " + std::to_string(n));
      break;
    }
  }

  bool mask_ok = true;
  for (std::size_t n = 0; n < ds.ratings_full.data.size() && mask_ok; ++n) {
    const std::uint8_t expect =
        ds.exposures.data[n] ? ds.ratings_full.data[n] : 0;
    if (ds.ratings_obs.data[n] != expect) {
      fail("masking identity violated at cell " + std::to_string(n));
      mask_ok = false;
    }
  }

  for (std::size_t u = 0; u < users; ++u) {
    std::size_t c = 0;
    for (std::size_t i = 0; i < items; ++i) c += ds.exposures.at(u, i);
    if (c == 0) {
      fail("user " + std::to_string(u) + " has no exposures");
      break;
    }
  }

  const double target_rate = ds.source_path.empty()
                                 ? ds.config.exposure_rate
                                 : ds.source_exposure_rate;
  const double cells = static_cast<double>(users * items);
  report.exposure_rate = static_cast<double>(ds.exposure_count()) / cells;
  report.exposure_rate_error = std::abs(report.exposure_rate - target_rate);
  const double tolerance =
      (static_cast<double>(ds.repairs.size()) + 1.0) / cells;
  if (report.exposure_rate_error > tolerance) {
    fail("exposure rate " + std::to_string(report.exposure_rate) +
         " misses target " + std::to_string(target_rate) + " beyond " +
         std::to_string(tolerance));
  }

  report.rating_histogram = rating_histogram(ds.ratings_full, nullptr);
  if (!ds.source_path.empty()) {
    const auto expected =
        allocate_histogram(ds.source_rating_histogram, users * items);
    if (report.rating_histogram != expected) {
      fail("semi-synthetic rating histogram does not match the source "
           "allocation");
    }
  }

  for (const double v : ds.features.data) {
    if (!std::isfinite(v)) {
      fail("non-finite feature value");
      break;
    }
  }
  return report;
}

}  // namespace deconf::datagen
