"""deepfake desk pipeline: data, training, ensembling and the dfdesk CLI."""
