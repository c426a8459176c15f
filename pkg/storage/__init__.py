"""DTF1 tensor files, CSV matrices and the on-disk graph basis cache."""
