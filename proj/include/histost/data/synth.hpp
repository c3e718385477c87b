// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "histost/data/slide.hpp"

namespace histost::data {

/// Parameters of the synthetic tissue generator.
///
/// Domains are Voronoi cells of random seed points on the grid. For a spot in
/// domain d with morphology draw v:
///
///   v       ~ N(morph_mean[d], morph_noise^2 I)
///   mean_g  = gene_program[d][g] * exp(joint_coupling * <u_g, v - morph_mean[d]>)   (joint genes)
///   mean_g  = gene_program[d][g]                                                     (other genes)
///   count_g ~ Poisson(mean_g)   or round(mean_g) when count_noise is off
///
/// where u_g is a fixed random unit direction per joint gene. Joint genes
/// therefore vary within a domain in a way only the morphology explains.
struct SynthConfig {
    std::string slide_id = "synth";
    int rows = 32;
    int cols = 32;
    int n_domains = 4;
    int n_genes = 100;
    int feature_dim = 32;
    std::uint64_t seed = 0;
    /// Seed for the domain programs; slides sharing it share biology.
    std::uint64_t program_seed = 0;

    /// Typical expected count per gene.
    double base_mean = 6.0;
    /// Log-fold change applied to each domain's marker genes.
    double domain_log_fold = 1.0;
    /// Fraction of genes that are markers for each domain.
    double marker_fraction = 0.1;
    /// Std of per-domain morphology means.
    double morph_separation = 1.0;
    /// Std of per-spot morphology noise; 0 disables it.
    double morph_noise = 1.0;
    /// Poisson sampling on/off.
    bool count_noise = true;
    /// Fraction of genes whose mean depends on the morphology draw.
    double joint_fraction = 0.0;
    /// Log-fold per unit morphology deviation along u_g.
    double joint_coupling = 0.5;

    CoordinateMode coordinate_mode = CoordinateMode::Grid;
    /// Continuous mode: centre-to-centre spacing and uniform jitter.
    double spacing_um = 55.0;
    double jitter_um = 0.0;

    /// Explicit programs override the generated ones (domains x genes and
    /// domains x feature_dim).
    std::optional<std::vector<std::vector<double>>> gene_programs;
    std::optional<std::vector<std::vector<double>>> morph_means;

    /// Throws ContractViolation on invalid fields.
    void validate() const;
};

/// The per-domain programs a config resolves to.
struct SynthPrograms {
    std::vector<std::vector<double>> gene_programs;
    std::vector<std::vector<double>> morph_means;
    std::vector<std::size_t> joint_genes;
    /// One unit vector per joint gene.
    std::vector<std::vector<double>> joint_directions;
};

SynthPrograms resolve_programs(const SynthConfig& config);

/// Deterministic in the config. Labels are "domain_<d>".
SlideDataset synth_tissue(const SynthConfig& config);

}  // namespace histost::data
