#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "ehrdr/kg.hpp"

namespace testing {

/// Directory removed on scope exit.
class TempDir {
 public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "ehrdr-test-XXXXXX").string();
    if (!mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write(const std::filesystem::path& p, const std::string& content) {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << content;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Hand-built graph:
///   c1 hypertension {hypertension, htn, high blood pressure} is_a c2
///   c2 cardiovascular disease
///   c3 essential hypertension is_a c1 (a hyponym of c1)
///   c4 lisinopril may_treat c1 (and c1 may_be_treated_by c4)
///   c5 gerd, c6 esomeprazole may_treat c5
///   c7 heart (inadmissible body part)
inline ehrdr::kg::KnowledgeGraph small_graph() {
  using ehrdr::kg::RelationKind;
  const std::string disease = "Disease, Syndrome or Pathologic Function";
  std::vector<ehrdr::kg::Concept> concepts{
      {"c1", disease, {"hypertension", "htn", "high blood pressure"}},
      {"c2", disease, {"cardiovascular disease", "cvd"}},
      {"c3", disease, {"essential hypertension"}},
      {"c4", "Chemical or Drug", {"lisinopril", "zestril"}},
      {"c5", disease, {"gerd", "gastroesophageal reflux disease"}},
      {"c6", "Chemical or Drug", {"esomeprazole", "nexium"}},
      {"c7", "Body Part, Organ, or Organ Component", {"heart"}},
  };
  std::vector<ehrdr::kg::Relation> relations{
      {"c1", RelationKind::is_a, "c2"},
      {"c3", RelationKind::is_a, "c1"},
      {"c4", RelationKind::may_treat, "c1"},
      {"c1", RelationKind::may_be_treated_by, "c4"},
      {"c6", RelationKind::may_treat, "c5"},
      {"c5", RelationKind::may_be_treated_by, "c6"},
  };
  return {concepts, relations};
}

}  // namespace testing
