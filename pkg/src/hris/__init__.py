"""Self-configuring hybrid RIS simulation toolkit."""
