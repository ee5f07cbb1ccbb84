"""Linear mixed models (one item) and latent process mixed models (several
items of one process) fitted by maximum likelihood, with BLUP prediction."""
