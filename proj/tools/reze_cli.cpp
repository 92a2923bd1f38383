// Command-line front end: fit, debias, loss, synth, train, isoscore, report,
// whiten. Exit codes: 0 success, 1 invalid arguments or data, 2 I/O failure.

#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "reze/reze.hpp"

namespace {

struct FitArgs {
  std::string anchors, positives, out;
  reze::FitConfig config;
  std::string aggregation = "median";
  std::string shrink_mode = "literal";
  bool normalize = true;
};

struct DebiasArgs {
  std::string rzm, anchors, positives, out, raw_out;
  bool verify = false;
};

struct LossArgs {
  std::string rzm, current_anchors, current_positives, ref_anchors,
      ref_positives;
  reze::ObjectiveConfig objective;
};

struct SynthArgs {
  std::string config, out_prefix;
};

struct TrainArgs {
  std::string config, rzm, out_history;
};

struct IsoArgs {
  std::string input;
};

struct ReportArgs {
  std::string rzm, before, after;
};

struct WhitenArgs {
  std::string fit, apply, out;
};

reze::Aggregation parse_aggregation(const std::string& s) {
  if (s == "median") return reze::Aggregation::median;
  if (s == "mean") return reze::Aggregation::mean;
  throw reze::validation_error("--aggregation must be median or mean");
}

reze::ShrinkMode parse_shrink_mode(const std::string& s) {
  if (s == "literal") return reze::ShrinkMode::literal;
  if (s == "signed") return reze::ShrinkMode::signed_denominator;
  throw reze::validation_error("--shrink-mode must be literal or signed");
}

// Relations of a dump pair as a relation-space dump: same ids and names,
// dimension doubled.
reze::EmbeddingDump relation_dump(const reze::RelationSet& set) {
  reze::EmbeddingDump out;
  out.dim = set.dim;
  out.vectors = set.relations;
  out.source_ids = set.source_ids;
  out.source_names = set.source_names;
  return out;
}

std::string fit_flags(const reze::FitConfig& config, bool normalize) {
  return "--rho " + reze::format_double(config.rho) + " --gamma " +
         reze::format_double(config.gamma) + " --eta " +
         reze::format_double(config.eta) + " --epsilon " +
         reze::format_double(config.epsilon) + " --clip-lo " +
         reze::format_double(config.clip_lo) + " --clip-hi " +
         reze::format_double(config.clip_hi) + " --aggregation " +
         reze::to_string(config.aggregation) + " --shrink-mode " +
         reze::to_string(config.shrink_mode) + " --normalize " +
         (normalize ? "true" : "false");
}

void run_fit(const FitArgs& args) {
  const std::string anchors_bytes = reze::read_file(args.anchors);
  const std::string positives_bytes = reze::read_file(args.positives);
  const reze::RelationSet relations =
      reze::build_relations(reze::parse_dump(anchors_bytes),
                            reze::parse_dump(positives_bytes), args.normalize);
  reze::FitConfig config = args.config;
  config.aggregation = parse_aggregation(args.aggregation);
  config.shrink_mode = parse_shrink_mode(args.shrink_mode);
  reze::RezeMatrix rm = reze::fit(relations, config);
  rm.input_digest = reze::digest_pair(anchors_bytes, positives_bytes);
  reze::write_reze_matrix(args.out, rm);
  reze::write_provenance(args.out, "fit",
                         {{"anchors", args.anchors},
                          {"positives", args.positives},
                          {"input_digest", rm.input_digest},
                          {"flags", fit_flags(config, args.normalize)}});
}

void run_debias(const DebiasArgs& args) {
  const reze::RezeMatrix rm = reze::read_reze_matrix(args.rzm);
  const std::string anchors_bytes = reze::read_file(args.anchors);
  const std::string positives_bytes = reze::read_file(args.positives);
  const std::string digest = reze::digest_pair(anchors_bytes, positives_bytes);
  if (args.verify && digest != rm.input_digest)
    reze::warn("input digest " + digest + " does not match fit-time digest " +
               (rm.input_digest.empty() ? "none" : rm.input_digest));
  const reze::RelationSet relations =
      reze::build_relations(reze::parse_dump(anchors_bytes),
                            reze::parse_dump(positives_bytes), rm.normalized);
  reze::require(relations.dim == rm.dim(), "relation dimension mismatch");
  reze::require(relations.sources() == rm.sources(), "source count mismatch");

  const reze::Provenance prov = {{"rzm", args.rzm},
                                 {"anchors", args.anchors},
                                 {"positives", args.positives},
                                 {"input_digest", digest}};
  if (!args.raw_out.empty()) {
    reze::write_dump(args.raw_out, relation_dump(relations));
    reze::write_provenance(args.raw_out, "debias", prov);
  }
  reze::EmbeddingDump debiased = relation_dump(relations);
  debiased.vectors =
      reze::debias_batch(relations.relations, rm, relations.source_ids);
  reze::write_dump(args.out, debiased);
  reze::write_provenance(args.out, "debias", prov);
}

void run_loss(const LossArgs& args) {
  const reze::RezeMatrix rm = reze::read_reze_matrix(args.rzm);
  const reze::EmbeddingDump cur_a = reze::read_dump(args.current_anchors);
  const reze::EmbeddingDump cur_p = reze::read_dump(args.current_positives);
  const reze::EmbeddingDump ref_a = reze::read_dump(args.ref_anchors);
  const reze::EmbeddingDump ref_p = reze::read_dump(args.ref_positives);
  const reze::RelationSet current =
      reze::build_relations(cur_a, cur_p, rm.normalized);
  const reze::RelationSet reference =
      reze::build_relations(ref_a, ref_p, rm.normalized);
  reze::require(current.dim == rm.dim(), "relation dimension mismatch");
  reze::require(current.size() == reference.size(),
                "current and reference sample counts differ");
  reze::require(current.source_ids == reference.source_ids,
                "current and reference source_ids differ");
  reze::require(current.sources() == rm.sources(), "source count mismatch");
  const reze::Matrix targets =
      reze::debias_batch(reference.relations, rm, reference.source_ids);
  const reze::LossReport report =
      reze::compute_losses(cur_a.vectors, cur_p.vectors, current.relations,
                           targets, args.objective);
  std::cout << reze::format_provenance_comment(
                   "loss",
                   {{"rzm", args.rzm},
                    {"flags",
                     "--temperature " +
                         reze::format_double(args.objective.temperature) +
                         " --reg-weight " +
                         reze::format_double(args.objective.reg_weight)}})
            << "main: " << reze::format_double(report.main) << "\n"
            << "reze: " << reze::format_double(report.reze) << "\n"
            << "combined: " << reze::format_double(report.combined) << "\n";
}

void run_synth(const SynthArgs& args) {
  const std::string config_bytes = reze::read_file(args.config);
  const reze::SynthConfig config = reze::parse_synth_config(config_bytes);
  const reze::SynthResult result = reze::generate(config);
  const reze::Provenance prov = {
      {"config", args.config},
      {"config_digest", reze::digest_bytes(config_bytes)},
      {"seed", std::to_string(config.seed)}};
  reze::write_dump(args.out_prefix + ".anchors.rezd", result.anchors);
  reze::write_provenance(args.out_prefix + ".anchors.rezd", "synth", prov);
  reze::write_dump(args.out_prefix + ".positives.rezd", result.positives);
  reze::write_provenance(args.out_prefix + ".positives.rezd", "synth", prov);
  reze::atomic_write_file(
      args.out_prefix + ".truth.txt",
      reze::format_truth(result.truth,
                         reze::format_provenance_comment("synth", prov)));
}

void run_train(const TrainArgs& args) {
  const std::string config_bytes = reze::read_file(args.config);
  const reze::TrainRunConfig config = reze::parse_train_config(config_bytes);
  const reze::RezeMatrix rm = reze::read_reze_matrix(args.rzm);
  const reze::EmbeddingDump anchors = reze::read_dump(config.anchors_path);
  const reze::EmbeddingDump positives = reze::read_dump(config.positives_path);
  const reze::TrainResult result =
      reze::train(anchors, positives, rm, config.train);
  const reze::Provenance prov = {
      {"config", args.config},
      {"config_digest", reze::digest_bytes(config_bytes)},
      {"rzm", args.rzm}};
  reze::atomic_write_file(
      args.out_history,
      reze::format_history(result.history,
                           reze::format_provenance_comment("train", prov)));
  std::cout << reze::format_provenance_comment("train", prov)
            << "steps: " << result.history.size() << "\n"
            << "isoscore_initial: "
            << reze::format_double(result.isoscore_initial) << "\n"
            << "isoscore_final: " << reze::format_double(result.isoscore_final)
            << "\n"
            << "displacement_initial: "
            << reze::format_double(result.displacement_initial) << "\n"
            << "displacement_final: "
            << reze::format_double(result.displacement_final) << "\n"
            << "reduction: " << reze::format_double(result.dispersion.reduction)
            << "\n";
}

void run_isoscore(const IsoArgs& args) {
  const reze::EmbeddingDump dump = reze::read_dump(args.input);
  const reze::IsotropyResult result = reze::isoscore_result(dump.vectors);
  std::cout << reze::format_provenance_comment("isoscore",
                                               {{"input", args.input}})
            << "isoscore: " << reze::format_double(result.score) << "\n"
            << "dim: " << result.dim << "\n"
            << "samples: " << result.samples << "\n";
}

void run_report(const ReportArgs& args) {
  const reze::RezeMatrix rm = reze::read_reze_matrix(args.rzm);
  const reze::EmbeddingDump before = reze::read_dump(args.before);
  const reze::EmbeddingDump after = reze::read_dump(args.after);
  reze::require(before.dim == rm.dim() && after.dim == rm.dim(),
                "report inputs must hold relation vectors of the fitted dimension");
  reze::require(before.size() == after.size(),
                "before and after sample counts differ");
  const reze::DispersionReport report = reze::dispersion_report(
      rm, before.vectors, before.source_ids, after.vectors, after.source_ids);
  std::cout << reze::format_provenance_comment(
                   "report", {{"rzm", args.rzm},
                              {"before", args.before},
                              {"after", args.after}})
            << reze::format_report(report, reze::isoscore(before.vectors),
                                   reze::isoscore(after.vectors),
                                   reze::mean_displacement(before.vectors,
                                                           after.vectors));
}

void run_whiten(const WhitenArgs& args) {
  const reze::EmbeddingDump fit_dump = reze::read_dump(args.fit);
  const reze::EmbeddingDump apply_dump = reze::read_dump(args.apply);
  reze::require(fit_dump.dim == apply_dump.dim, "dimension mismatch");
  const reze::Whitening w = reze::whitening_fit(fit_dump.vectors);
  reze::EmbeddingDump out = apply_dump;
  out.vectors = reze::whitening_apply_rows(apply_dump.vectors, w);
  reze::write_dump(args.out, out);
  reze::write_provenance(args.out, "whiten",
                         {{"fit", args.fit}, {"apply", args.apply}});
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"representation debiasing toolkit"};
  app.require_subcommand(1);

  FitArgs fit_args;
  CLI::App* fit = app.add_subcommand("fit", "fit a debiasing matrix");
  fit->add_option("--anchors", fit_args.anchors, "anchor dump")->required();
  fit->add_option("--positives", fit_args.positives, "positive dump")->required();
  fit->add_option("--out", fit_args.out, "output .rzm path")->required();
  fit->add_option("--rho", fit_args.config.rho, "active variance ratio");
  fit->add_option("--gamma", fit_args.config.gamma, "threshold scale");
  fit->add_option("--eta", fit_args.config.eta, "shrink strength");
  fit->add_option("--epsilon", fit_args.config.epsilon, "degeneracy guard");
  fit->add_option("--clip-lo", fit_args.config.clip_lo, "shrink clamp lower");
  fit->add_option("--clip-hi", fit_args.config.clip_hi, "shrink clamp upper");
  fit->add_option("--aggregation", fit_args.aggregation, "median or mean");
  fit->add_option("--shrink-mode", fit_args.shrink_mode, "literal or signed");
  fit->add_option("--normalize", fit_args.normalize,
                  "unit-normalize relation halves");

  DebiasArgs debias_args;
  CLI::App* debias = app.add_subcommand("debias", "debias a dump pair");
  debias->add_option("--rzm", debias_args.rzm, "fitted .rzm")->required();
  debias->add_option("--anchors", debias_args.anchors, "anchor dump")->required();
  debias->add_option("--positives", debias_args.positives, "positive dump")
      ->required();
  debias->add_option("--out", debias_args.out, "debiased relation dump")
      ->required();
  debias->add_option("--raw-out", debias_args.raw_out,
                     "also write the pre-debias relation dump here");
  debias->add_flag("--verify", debias_args.verify,
                   "warn when the inputs differ from the fit-time inputs");

  LossArgs loss_args;
  CLI::App* loss = app.add_subcommand("loss", "evaluate the training losses");
  loss->add_option("--rzm", loss_args.rzm, "fitted .rzm")->required();
  loss->add_option("--current-anchors", loss_args.current_anchors,
                   "current anchor dump")
      ->required();
  loss->add_option("--current-positives", loss_args.current_positives,
                   "current positive dump")
      ->required();
  loss->add_option("--ref-anchors", loss_args.ref_anchors,
                   "reference anchor dump")
      ->required();
  loss->add_option("--ref-positives", loss_args.ref_positives,
                   "reference positive dump")
      ->required();
  loss->add_option("--temperature", loss_args.objective.temperature,
                   "contrastive temperature");
  loss->add_option("--reg-weight", loss_args.objective.reg_weight,
                   "alignment weight");

  SynthArgs synth_args;
  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic corpus");
  synth->add_option("--config", synth_args.config, "JSON config")->required();
  synth->add_option("--out-prefix", synth_args.out_prefix, "output prefix")
      ->required();

  TrainArgs train_args;
  CLI::App* train = app.add_subcommand("train", "run the toy training loop");
  train->add_option("--config", train_args.config, "JSON config")->required();
  train->add_option("--rzm", train_args.rzm, "fitted .rzm")->required();
  train->add_option("--out-history", train_args.out_history,
                    "loss history TSV")
      ->required();

  IsoArgs iso_args;
  CLI::App* iso = app.add_subcommand("isoscore", "isotropy of a dump");
  iso->add_option("--input", iso_args.input, "embedding dump")->required();

  ReportArgs report_args;
  CLI::App* report =
      app.add_subcommand("report", "dispersion before and after debiasing");
  report->add_option("--rzm", report_args.rzm, "fitted .rzm")->required();
  report->add_option("--before", report_args.before, "relation dump")->required();
  report->add_option("--after", report_args.after, "relation dump")->required();

  WhitenArgs whiten_args;
  CLI::App* whiten = app.add_subcommand("whiten", "whiten a dump");
  whiten->add_option("--fit", whiten_args.fit, "dump to fit the transform on")
      ->required();
  whiten->add_option("--apply", whiten_args.apply, "dump to transform")
      ->required();
  whiten->add_option("--out", whiten_args.out, "whitened dump")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << std::flush;
    return 1;
  }

  try {
    if (app.got_subcommand(fit)) run_fit(fit_args);
    if (app.got_subcommand(debias)) run_debias(debias_args);
    if (app.got_subcommand(loss)) run_loss(loss_args);
    if (app.got_subcommand(synth)) run_synth(synth_args);
    if (app.got_subcommand(train)) run_train(train_args);
    if (app.got_subcommand(iso)) run_isoscore(iso_args);
    if (app.got_subcommand(report)) run_report(report_args);
    if (app.got_subcommand(whiten)) run_whiten(whiten_args);
  } catch (const reze::io_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const reze::validation_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
