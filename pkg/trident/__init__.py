"""Multi-modal (audio, video, RF) drone presence detection."""
