"""Feature extraction companion: images + prompts -> .adft/.adtx files."""
