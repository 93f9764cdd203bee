from .synthetic import LabeledImage, ImageBatch, generate_synthetic, render_face, nearest_centroid_accuracy
from .augment import augment, expand_corpus, rotate_image, flip_image
from .folds import FoldPlan, make_group_folds, deal_groups, save_folds, load_folds
from .pgm import save_dataset, load_dataset, read_pgm, write_pgm
