"""Test suite for the deepfake desk pipeline."""
