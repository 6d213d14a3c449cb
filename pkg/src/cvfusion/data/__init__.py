"""Configuration, KITTI file formats, synthetic scenes and augmentation."""
