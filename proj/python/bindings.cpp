#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "ehrdr/corpus.hpp"
#include "ehrdr/encoder.hpp"
#include "ehrdr/evalkit.hpp"
#include "ehrdr/kg.hpp"
#include "ehrdr/manifest.hpp"
#include "ehrdr/matcher.hpp"
#include "ehrdr/pairgen.hpp"
#include "ehrdr/pipeline.hpp"
#include "ehrdr/synth.hpp"
#include "ehrdr/trainer.hpp"

namespace py = pybind11;
using namespace ehrdr;

namespace {

eval::RelevantSet to_set(const std::vector<std::string>& v) { return {v.begin(), v.end()}; }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Two-stage dense retrieval training for clinical notes (C++ core).";

  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);

  // corpus
  py::class_<corpus::Chunk>(m, "Chunk")
      .def_readonly("note_id", &corpus::Chunk::note_id)
      .def_readonly("ordinal", &corpus::Chunk::ordinal)
      .def_readonly("start_word", &corpus::Chunk::start_word)
      .def_readonly("end_word", &corpus::Chunk::end_word)
      .def_readonly("text", &corpus::Chunk::text)
      .def_property_readonly("id", &corpus::Chunk::id)
      .def("__repr__", [](const corpus::Chunk& c) {
        return "<Chunk " + c.id() + " [" + std::to_string(c.start_word) + "," + std::to_string(c.end_word) + ")>";
      });
  m.def(
      "clean_note",
      [](const std::string& raw, const std::vector<std::string>& masks) { return corpus::clean_note(raw, masks); },
      py::arg("raw"), py::arg("mask_patterns") = std::vector<std::string>{"___"});
  m.def(
      "chunk_note",
      [](const std::string& note_id, const std::string& text, std::size_t window, std::size_t overlap) {
        return corpus::chunk_note(corpus::Note{note_id, text}, window, overlap);
      },
      py::arg("note_id"), py::arg("text"), py::arg("window") = 100, py::arg("overlap") = 10);
  m.def("load_chunks", &corpus::load_chunks, py::arg("path"));

  // kg + matcher
  py::class_<kg::KnowledgeGraph>(m, "KnowledgeGraph")
      .def_static(
          "load",
          [](const std::filesystem::path& concepts, const std::filesystem::path& relations) {
            return kg::load_kg(concepts, relations);
          },
          py::arg("concepts"), py::arg("relations"))
      .def("__len__", [](const kg::KnowledgeGraph& g) { return g.concepts().size(); })
      .def("lookup_term", &kg::KnowledgeGraph::lookup_term, py::arg("term"))
      .def(
          "neighbors",
          [](const kg::KnowledgeGraph& g, const std::string& id, const std::string& cls,
             const std::string& seed_surface) {
            kg::NeighborClass c;
            if (cls == "synonym") c = kg::NeighborClass::synonym;
            else if (cls == "hypernym") c = kg::NeighborClass::hypernym;
            else if (cls == "related") c = kg::NeighborClass::related;
            else throw ConfigError("class must be synonym, hypernym or related");
            return g.neighbors(id, c, seed_surface);
          },
          py::arg("concept_id"), py::arg("cls"), py::arg("seed_surface") = "");

  py::class_<matcher::Mention>(m, "Mention")
      .def_readonly("surface", &matcher::Mention::surface)
      .def_readonly("start_char", &matcher::Mention::start_char)
      .def_readonly("end_char", &matcher::Mention::end_char)
      .def_readonly("concept_ids", &matcher::Mention::concept_ids);
  py::class_<matcher::TermAutomaton>(m, "TermAutomaton")
      .def(py::init<const std::map<std::string, std::vector<std::string>>&>(), py::arg("dictionary"))
      .def_static(
          "from_graph", [](const kg::KnowledgeGraph& g) { return matcher::build_automaton(g, g.filter()); },
          py::arg("kg"))
      .def_property_readonly("pattern_count", &matcher::TermAutomaton::pattern_count)
      .def("find_mentions", &matcher::TermAutomaton::find_mentions, py::arg("text"));

  // trainer
  py::class_<trainer::MslConfig>(m, "MslConfig")
      .def(py::init<>())
      .def_readwrite("epsilon", &trainer::MslConfig::epsilon)
      .def_readwrite("alpha", &trainer::MslConfig::alpha)
      .def_readwrite("beta", &trainer::MslConfig::beta)
      .def_readwrite("lambda_", &trainer::MslConfig::lambda);
  m.def(
      "mine",
      [](const std::vector<double>& pos, const std::vector<double>& neg, double eps) {
        const auto r = trainer::mine(pos, neg, eps);
        return py::make_tuple(r.positives, r.negatives);
      },
      py::arg("positives"), py::arg("negatives"), py::arg("epsilon") = 0.1,
      "Indices of informative positives and negatives.");
  m.def(
      "msl_loss",
      [](const std::vector<double>& pos, const std::vector<double>& neg, const trainer::MslConfig& cfg) {
        return trainer::msl_loss(trainer::mine(pos, neg, cfg.epsilon), pos, neg, cfg);
      },
      py::arg("positives"), py::arg("negatives"), py::arg("config") = trainer::MslConfig{});
  m.def("lr_at", [](std::size_t step, std::size_t total, double lr, double warmup) {
    trainer::TrainConfig c;
    c.lr = lr;
    c.warmup_ratio = warmup;
    return trainer::lr_at(step, total, c);
  }, py::arg("step"), py::arg("total_steps"), py::arg("lr") = 1e-4, py::arg("warmup_ratio") = 0.1);

  // encoder
  py::class_<encoder::EncoderParams>(m, "Encoder")
      .def_static("load", &encoder::load_checkpoint, py::arg("path"))
      .def(py::init([](const std::vector<std::string>& texts, std::size_t dim, std::uint64_t seed) {
             return encoder::EncoderParams(encoder::Vocabulary::build(texts), dim, seed);
           }),
           py::arg("texts"), py::arg("dim") = 64, py::arg("seed") = 0)
      .def("save", [](const encoder::EncoderParams& p, const std::filesystem::path& path) {
        encoder::save_checkpoint(path, p);
      }, py::arg("path"))
      .def_property_readonly("dim", &encoder::EncoderParams::dim)
      .def_property_readonly("rows", &encoder::EncoderParams::rows)
      .def(
          "encode",
          [](const encoder::EncoderParams& p, const std::string& text, std::size_t max_tokens) {
            return encoder::encode_text(p, text, max_tokens).embedding;
          },
          py::arg("text"), py::arg("max_tokens") = encoder::kChunkTokenBudget)
      .def(
          "similarity",
          [](const encoder::EncoderParams& p, const std::string& a, const std::string& b) {
            return encoder::similarity(encoder::encode_text(p, a, encoder::kChunkTokenBudget).embedding,
                                       encoder::encode_text(p, b, encoder::kChunkTokenBudget).embedding);
          },
          py::arg("a"), py::arg("b"));

  // evalkit
  m.def("reciprocal_rank", [](const std::vector<std::string>& r, const std::vector<std::string>& rel) {
    return eval::reciprocal_rank(r, to_set(rel));
  }, py::arg("ranking"), py::arg("relevant"));
  m.def("average_precision", [](const std::vector<std::string>& r, const std::vector<std::string>& rel) {
    return eval::average_precision(r, to_set(rel));
  }, py::arg("ranking"), py::arg("relevant"));
  m.def("ndcg", [](const std::vector<std::string>& r, const std::vector<std::string>& rel,
                   std::optional<std::size_t> cutoff) { return eval::ndcg(r, to_set(rel), cutoff); },
        py::arg("ranking"), py::arg("relevant"), py::arg("cutoff") = py::none());
  m.def("recall_at", [](const std::vector<std::string>& r, const std::vector<std::string>& rel, std::size_t k) {
    return eval::recall_at(r, to_set(rel), k);
  }, py::arg("ranking"), py::arg("relevant"), py::arg("k") = 100);

  // pairs, benchmark, pipeline
  m.def(
      "pair_stats",
      [](const std::filesystem::path& path) {
        const auto sets = pairgen::load_pairs(path);
        return pairgen::compute_stats(sets, pairgen::infer_stage(sets)).to_json();
      },
      py::arg("path"), "Per-source statistics of a pairs file, as JSON text.");
  m.def(
      "write_benchmark",
      [](const std::filesystem::path& out, std::uint64_t seed, std::size_t train_notes, std::size_t eval_notes) {
        synth::SynthOptions o;
        o.seed = seed;
        o.train_notes = train_notes;
        o.eval_notes = eval_notes;
        const auto b = synth::generate(o);
        synth::write_benchmark(b, out);
        return b.judgments.queries().size();
      },
      py::arg("out"), py::arg("seed") = 7, py::arg("train_notes") = 200, py::arg("eval_notes") = 50,
      "Writes the synthetic benchmark; returns the number of queries.");
  m.def(
      "run_pipeline",
      [](const std::vector<std::filesystem::path>& configs, const std::map<std::string, std::string>& overrides,
         const std::string& from, const std::string& to) {
        Manifest man;
        for (const auto& c : configs) man.load(c);
        for (const auto& [k, v] : overrides) man.set(k, v);
        pipeline::Pipeline p(pipeline::PipelineConfig::from_manifest(man));
        {
          py::gil_scoped_release release;
          p.run(pipeline::parse_stage(from), pipeline::parse_stage(to));
        }
        return pipeline::reports_json(p.reports()).dump();
      },
      py::arg("configs"), py::arg("overrides") = std::map<std::string, std::string>{}, py::arg("from_stage") = "chunk",
      py::arg("to_stage") = "eval", "Runs the pipeline; returns the evaluation report as JSON text.");
}
