"""Use case layer - Application business logic"""
